# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled reduction over token pairs.

Inputs are whitened coordinates, so plain Euclidean distance here equals
Mahalanobis distance in the original space. The reduction never materializes
per-pair arrays, which is the whole point versus the numpy fallback.
"""

from libc.math cimport fabs, sqrt

cimport numpy as cnp


def pair_absdiff_mean(const double[:, ::1] before_w,
                      const double[:, ::1] after_w,
                      const cnp.int64_t[::1] idx_i,
                      const cnp.int64_t[::1] idx_j):
    """Mean over pairs k of |dist(after[i_k], after[j_k]) - dist(before[i_k], before[j_k])|."""
    cdef Py_ssize_t m = idx_i.shape[0]
    cdef Py_ssize_t d = before_w.shape[1]
    cdef Py_ssize_t k, c, i, j
    cdef double acc = 0.0
    cdef double sb, sa, diff
    if m == 0:
        raise ValueError("no pairs")
    for k in range(m):
        i = <Py_ssize_t> idx_i[k]
        j = <Py_ssize_t> idx_j[k]
        sb = 0.0
        sa = 0.0
        for c in range(d):
            diff = before_w[i, c] - before_w[j, c]
            sb += diff * diff
            diff = after_w[i, c] - after_w[j, c]
            sa += diff * diff
        acc += fabs(sqrt(sa) - sqrt(sb))
    return acc / m


def pair_absdiff_mean_full(const double[:, ::1] before_w,
                           const double[:, ::1] after_w):
    """Same reduction enumerated over all i < j, without index arrays."""
    cdef Py_ssize_t n = before_w.shape[0]
    cdef Py_ssize_t d = before_w.shape[1]
    cdef Py_ssize_t i, j, c
    cdef double acc = 0.0
    cdef double sb, sa, diff
    cdef double m = 0.5 * n * (n - 1)
    if n < 2:
        raise ValueError("need at least two rows")
    for i in range(n):
        for j in range(i + 1, n):
            sb = 0.0
            sa = 0.0
            for c in range(d):
                diff = before_w[i, c] - before_w[j, c]
                sb += diff * diff
                diff = after_w[i, c] - after_w[j, c]
                sa += diff * diff
            acc += fabs(sqrt(sa) - sqrt(sb))
    return acc / m
