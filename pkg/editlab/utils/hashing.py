"""Content hashes used to tie outputs to the inputs they were made from"""
import hashlib
import json

import numpy as np


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    """hex sha256 of a file's bytes"""
    h = hashlib.sha256()
    with open(path, "rb") as fin:
        for block in iter(lambda: fin.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_json(obj):
    """hex sha256 of the canonical (sorted keys, compact) JSON encoding of obj"""
    return sha256_bytes(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8"))


def sha256_arrays(named_arrays, prefix=b""):
    """hex sha256 over (name, little-endian float64 bytes) pairs in the given order"""
    h = hashlib.sha256(prefix)
    for name, arr in named_arrays:
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


def stable_int(*parts):
    """process independent 32 bit integer from strings/ints, for seeding"""
    s = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(s, digest_size=4).digest(), "little")
