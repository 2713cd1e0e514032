# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel implementations (hot loops of k-means and pairwise
distances). Semantics mirror ``davalid._kernels._py``."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NAME = "compiled"


def pairwise_sqdist(a, b):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0], m = B.shape[0], d = A.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                diff = A[i, k] - B[j, k]
                acc += diff * diff
            out[i, j] = acc
    return out


def lloyd_step(x, centers):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] X = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] C = np.ascontiguousarray(centers, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0], k = C.shape[0], d = X.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] labels = np.empty(n, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] point_sqdist = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] sums = np.zeros((k, d), dtype=np.float64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] counts = np.zeros(k, dtype=np.int64)
    cdef Py_ssize_t i, j, q, best
    cdef double acc, diff, best_d
    for i in range(n):
        best = 0
        best_d = 0.0
        for j in range(k):
            acc = 0.0
            for q in range(d):
                diff = X[i, q] - C[j, q]
                acc += diff * diff
            if j == 0 or acc < best_d:
                best_d = acc
                best = j
        labels[i] = best
        point_sqdist[i] = best_d
        counts[best] += 1
        for q in range(d):
            sums[best, q] += X[i, q]
    return labels, point_sqdist, sums, counts
