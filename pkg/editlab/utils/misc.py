"""Miscellaneous utilities"""


def chunks(arr, n):
    """Yield successive n-sized chunks from arr

    Parameters
    ----------
    arr: list-like
    n: int
        length of chunks

    Yields
    ------
    arr_chunk: array_like
    """
    for i in range(0, len(arr), n):
        yield arr[i:i + n]


def contains_subsequence(seq, sub):
    """True if sub occurs contiguously in seq, sub must be non-empty"""
    sub = list(sub)
    seq = list(seq)
    n = len(sub)
    if n == 0:
        raise ValueError("contains_subsequence needs a non-empty subsequence")
    return any(seq[i:i + n] == sub for i in range(len(seq) - n + 1))


def find_subsequence(seq, sub):
    """index of the first contiguous occurrence of sub in seq, or -1"""
    sub = list(sub)
    seq = list(seq)
    n = len(sub)
    for i in range(len(seq) - n + 1):
        if seq[i:i + n] == sub:
            return i
    return -1
