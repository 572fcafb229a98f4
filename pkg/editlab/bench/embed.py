"""Hashed n-gram embeddings and cosine nearest neighbours"""
import hashlib

import numpy as np

DEFAULT_DIM = 512
NGRAM_ORDERS = (1, 2, 3)


def _bucket(ngram, dim, key):
    h = hashlib.blake2b("\x1f".join(ngram).encode("utf-8"), digest_size=8, key=key)
    return int.from_bytes(h.digest(), "little") % dim


def embed(tokens, dim=DEFAULT_DIM, seed=0):
    """unit-norm count vector of hashed 1, 2 and 3-grams, zeros for an empty sequence

    Parameters
    ----------
    tokens: list(str)
    dim: int, default 512
    seed: int, default 0
        keys the hash

    Returns
    -------
    vec: np.ndarray(dim)
    """
    key = int(seed).to_bytes(8, "little", signed=False)
    tokens = list(tokens)
    vec = np.zeros(dim)
    for n in NGRAM_ORDERS:
        for i in range(len(tokens) - n + 1):
            vec[_bucket(tokens[i:i + n], dim, key)] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def cosine_distance(a, b):
    """1 - cosine similarity, inputs are unit norm or zero"""
    return 1.0 - float(np.dot(a, b))


def nearest(query, matrix):
    """indices of matrix rows by increasing cosine distance to query, ties by lower index"""
    dist = 1.0 - matrix @ query
    return np.argsort(dist, kind="stable"), dist
