# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: nearest-centroid search, greedy RVQ encoding,
k-means accumulation and word-level edit distance.

Every routine here has a numpy twin in ``avdub._pykernels`` with the same
signature; ``avdub.kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def nearest_centroid(const double[:, ::1] x, const double[:, ::1] centroids):
    """Index of the closest centroid per row (lowest index on ties) and the
    squared distance to it."""
    cdef Py_ssize_t n = x.shape[0], v = centroids.shape[0], f = x.shape[1]
    cdef Py_ssize_t i, j, d
    cdef double best, acc, diff
    cdef Py_ssize_t best_j
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] idx_v = idx
    cdef double[::1] dist_v = dist
    with nogil:
        for i in range(n):
            best = 1e308
            best_j = 0
            for j in range(v):
                acc = 0.0
                for d in range(f):
                    diff = x[i, d] - centroids[j, d]
                    acc = acc + diff * diff
                    if acc >= best:
                        break
                if acc < best:
                    best = acc
                    best_j = j
            idx_v[i] = best_j
            dist_v[i] = best
    return idx, dist


def rvq_encode(const double[:, ::1] x, const double[:, :, ::1] books):
    """Greedy residual quantisation of each row through ``books`` [K, V, F]."""
    cdef Py_ssize_t n = x.shape[0], f = x.shape[1]
    cdef Py_ssize_t k_books = books.shape[0], v = books.shape[1]
    cdef Py_ssize_t i, k, j, d, best_j
    cdef double best, acc, diff
    codes = np.empty((n, k_books), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] codes_v = codes
    resid = np.empty(f, dtype=np.float64)
    cdef double[::1] r = resid
    with nogil:
        for i in range(n):
            for d in range(f):
                r[d] = x[i, d]
            for k in range(k_books):
                best = 1e308
                best_j = 0
                for j in range(v):
                    acc = 0.0
                    for d in range(f):
                        diff = r[d] - books[k, j, d]
                        acc = acc + diff * diff
                        if acc >= best:
                            break
                    if acc < best:
                        best = acc
                        best_j = j
                codes_v[i, k] = best_j
                for d in range(f):
                    r[d] = r[d] - books[k, best_j, d]
    return codes


def accumulate_means(const double[:, ::1] x, const cnp.int64_t[::1] labels, Py_ssize_t num_clusters):
    """Per-cluster sums and counts, accumulated in row order."""
    cdef Py_ssize_t n = x.shape[0], f = x.shape[1], i, d, c
    sums = np.zeros((num_clusters, f), dtype=np.float64)
    counts = np.zeros(num_clusters, dtype=np.int64)
    cdef double[:, ::1] s = sums
    cdef cnp.int64_t[::1] cnt = counts
    with nogil:
        for i in range(n):
            c = labels[i]
            cnt[c] += 1
            for d in range(f):
                s[c, d] = s[c, d] + x[i, d]
    return sums, counts


def levenshtein(const cnp.int64_t[::1] ref, const cnp.int64_t[::1] hyp):
    """Unit-cost edit distance between two integer sequences."""
    cdef Py_ssize_t n = ref.shape[0], m = hyp.shape[0], i, j
    cdef cnp.int64_t sub, ins, dele, best
    if n == 0:
        return m
    if m == 0:
        return n
    prev_a = np.arange(m + 1, dtype=np.int64)
    cur_a = np.empty(m + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] prev = prev_a
    cdef cnp.int64_t[::1] cur = cur_a
    cdef cnp.int64_t[::1] tmp
    for i in range(1, n + 1):
        cur[0] = i
        for j in range(1, m + 1):
            sub = prev[j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            cur[j] = best
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[m])
