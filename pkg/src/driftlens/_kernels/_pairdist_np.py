"""Pure-numpy fallback for the pair reduction kernels.

Vectorized but allocates per-chunk temporaries; the compiled extension does
the same arithmetic with no intermediates. Chunking bounds peak memory.
"""

import numpy as np

_CHUNK = 1 << 18


def _dists(points: np.ndarray, ii: np.ndarray, jj: np.ndarray) -> np.ndarray:
    delta = points[ii] - points[jj]
    return np.sqrt(np.einsum("kc,kc->k", delta, delta))


def pair_absdiff_mean(before_w, after_w, idx_i, idx_j):
    m = idx_i.shape[0]
    if m == 0:
        raise ValueError("no pairs")
    acc = 0.0
    for s in range(0, m, _CHUNK):
        ii = idx_i[s : s + _CHUNK]
        jj = idx_j[s : s + _CHUNK]
        acc += float(np.abs(_dists(after_w, ii, jj) - _dists(before_w, ii, jj)).sum())
    return acc / m


def pair_absdiff_mean_full(before_w, after_w):
    n = before_w.shape[0]
    if n < 2:
        raise ValueError("need at least two rows")
    ii, jj = np.triu_indices(n, k=1)
    return pair_absdiff_mean(before_w, after_w, ii, jj)
