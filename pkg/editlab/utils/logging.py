import sys
from datetime import datetime


def print_log(msg, show_time=True, blank_lines=False, logfiles=None):
    """write a log message, one "LOG <time>: " prefixed line per line of msg

    Parameters
    ----------
    msg: str
        message, may contain newlines
    show_time: bool, default True
        include a timestamp
    blank_lines: bool, default False
        surround message with blank lines
    logfiles: list(file), default [sys.stdout]
        streams to write to
    """
    if logfiles is None:
        logfiles = [sys.stdout]

    if show_time:
        time_str = ' ' + datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    else:
        time_str = ''

    for logf in logfiles:
        if blank_lines:
            logf.write('\n')
        for l in msg.splitlines():
            logf.write('LOG' + time_str + ': ' + l + '\n')
        if blank_lines:
            logf.write('\n')
        logf.flush()


def cli_log(msg, verbose=True, **kwargs):
    """log from a command, to stdout and stderr, or only stderr when not verbose"""
    logfiles = [sys.stdout, sys.stderr] if verbose else [sys.stderr]
    print_log(msg, logfiles=logfiles, **kwargs)
