# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. ``_kernels_py`` holds the line-for-line Python twin."""

import numpy as np

from libc.stdlib cimport malloc, free


def gibbs_sweep(const int[::1] words, const int[::1] docs, int[::1] z,
                long long[:, ::1] nkw, long long[::1] nk, long long[:, ::1] ndk,
                double alpha, double eta, const double[::1] uniforms):
    """One collapsed-Gibbs pass over every token, updating counts in place."""
    cdef Py_ssize_t n = words.shape[0]
    cdef Py_ssize_t n_topics = nk.shape[0]
    cdef double v_eta = nkw.shape[1] * eta
    cdef double *cum = <double *> malloc(n_topics * sizeof(double))
    cdef Py_ssize_t i, j
    cdef int w, d, k
    cdef double acc, u
    if cum == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            w = words[i]
            d = docs[i]
            k = z[i]
            nkw[k, w] -= 1
            nk[k] -= 1
            ndk[d, k] -= 1
            acc = 0.0
            for j in range(n_topics):
                acc = acc + (ndk[d, j] + alpha) * (nkw[j, w] + eta) / (nk[j] + v_eta)
                cum[j] = acc
            u = uniforms[i] * acc
            k = <int> (n_topics - 1)
            for j in range(n_topics):
                if u < cum[j]:
                    k = <int> j
                    break
            z[i] = k
            nkw[k, w] += 1
            nk[k] += 1
            ndk[d, k] += 1
    finally:
        free(cum)


def infer_sweep(const int[::1] words, int[::1] z, long long[::1] ndk,
                const double[:, ::1] phi, double alpha, const double[::1] uniforms):
    """One Gibbs pass over a single document with topic-word weights fixed."""
    cdef Py_ssize_t n = words.shape[0]
    cdef Py_ssize_t n_topics = ndk.shape[0]
    cdef double *cum = <double *> malloc(n_topics * sizeof(double))
    cdef Py_ssize_t i, j
    cdef int w, k
    cdef double acc, u
    if cum == NULL:
        raise MemoryError()
    try:
        for i in range(n):
            w = words[i]
            k = z[i]
            ndk[k] -= 1
            acc = 0.0
            for j in range(n_topics):
                acc = acc + (ndk[j] + alpha) * phi[j, w]
                cum[j] = acc
            u = uniforms[i] * acc
            k = <int> (n_topics - 1)
            for j in range(n_topics):
                if u < cum[j]:
                    k = <int> j
                    break
            z[i] = k
            ndk[k] += 1
    finally:
        free(cum)


def lcs_length(const long long[::1] a, const long long[::1] b):
    """Length of the longest common subsequence of two id sequences."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef long long *row
    cdef long long diag, up, best
    if n == 0 or m == 0:
        return 0
    row = <long long *> malloc((m + 1) * sizeof(long long))
    if row == NULL:
        raise MemoryError()
    try:
        for j in range(m + 1):
            row[j] = 0
        for i in range(n):
            diag = 0
            for j in range(1, m + 1):
                up = row[j]
                if a[i] == b[j - 1]:
                    best = diag + 1
                elif row[j - 1] > up:
                    best = row[j - 1]
                else:
                    best = up
                diag = up
                row[j] = best
        return row[m]
    finally:
        free(row)
