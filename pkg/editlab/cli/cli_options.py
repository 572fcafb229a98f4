import sys
import functools

import click

from editlab.errors import (ConfigError, ContractError, TrainingError, EditError, BenchmarkQualityError,
                            ProvenanceError, RollbackError, StaleHandleError)

COMMAND_ERRORS = (ConfigError, ContractError, TrainingError, EditError, BenchmarkQualityError, ProvenanceError,
                  RollbackError, StaleHandleError)


def seed(f):
    f = click.option("--seed", type=click.INT, help="base seed, overrides the config file")(f)
    return f


def runs(f):
    f = click.option("--runs", "n_runs", type=click.INT, help="number of runs whose median is reported")(f)
    return f


def _to_autopara_info(ctx, param, value):
    if value is None:
        return None
    if value < 0:
        raise click.BadParameter("must be >= 0")
    return {"num_python_subprocesses": value}


def workers(f):
    f = click.option("--workers", type=click.INT, callback=_to_autopara_info,
                     help="worker processes, 0 for serial [default from config or "
                          "EDITLAB_NUM_PYTHON_SUBPROCESSES]")(f)
    return f


def _parse_list(ctx, param, value):
    if value is None:
        return None
    return [v.strip() for v in value.split(",") if v.strip()]


def editors(f):
    f = click.option("--editors", callback=_parse_list,
                     help="comma separated editors, e.g. pre_edit,adalora,adalora_l")(f)
    return f


def gates(f):
    f = click.option("--assert", "check", is_flag=True, help="exit nonzero if an acceptance gate fails")(f)
    return f


def no_cache(f):
    f = click.option("--no-cache", is_flag=True, help="recompute instead of reading cached layer scores")(f)
    return f


def out(f):
    f = click.option("--out", type=click.Path(file_okay=False), help="output directory, overrides the config")(f)
    return f


def autopara_from(ctx, workers_info):
    """explicit --workers, else run/workers from the config (0 leaves the env var in charge)"""
    if workers_info is not None:
        return workers_info
    n = ctx.obj["config"].get("run/workers", 0)
    return {"num_python_subprocesses": n} if n else None


def exit_on_error(f):
    """turn editlab errors into a message on stderr and exit status 1"""
    @functools.wraps(f)
    def wrapper(ctx, *args, **kwargs):
        try:
            return f(ctx, *args, **kwargs)
        except COMMAND_ERRORS as exc:
            sys.stderr.write(f"editlab {ctx.info_name}: {type(exc).__name__}: {exc}\n")
            diagnostics = getattr(exc, "diagnostics", None)
            if diagnostics:
                for key, val in diagnostics.items():
                    sys.stderr.write(f"    {key}: {val}\n")
            ctx.exit(1)
    return wrapper
