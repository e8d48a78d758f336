# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled linear-chain CRF kernels.

All arrays are float64; ``tags`` is int64. Signatures mirror
``slavner.crf._pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


cdef inline double _lse_row(double[::1] v, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double m = -INFINITY, s = 0.0
    for i in range(n):
        if v[i] > m:
            m = v[i]
    for i in range(n):
        s += exp(v[i] - m)
    return m + log(s)


cdef double _path_score(double[:, ::1] em, double[:, ::1] tr, double[::1] st,
                        double[::1] en, long long[::1] tags) noexcept nogil:
    cdef Py_ssize_t t, T = em.shape[0]
    cdef double score = st[tags[0]] + em[0, tags[0]]
    for t in range(1, T):
        score = score + tr[tags[t - 1], tags[t]]
        score = score + em[t, tags[t]]
    return score + en[tags[T - 1]]


cdef void _forward(double[:, ::1] em, double[:, ::1] tr, double[::1] st,
                   double[:, ::1] alpha, double[::1] buf) noexcept nogil:
    cdef Py_ssize_t T = em.shape[0], L = em.shape[1]
    cdef Py_ssize_t t, i, j
    for j in range(L):
        alpha[0, j] = st[j] + em[0, j]
    for t in range(1, T):
        for j in range(L):
            for i in range(L):
                buf[i] = alpha[t - 1, i] + tr[i, j]
            alpha[t, j] = _lse_row(buf, L) + em[t, j]


def path_score(double[:, ::1] em, double[:, ::1] tr, double[::1] st,
               double[::1] en, long long[::1] tags):
    return _path_score(em, tr, st, en, tags)


def log_partition(double[:, ::1] em, double[:, ::1] tr, double[::1] st, double[::1] en):
    cdef Py_ssize_t T = em.shape[0], L = em.shape[1], j
    alpha_arr = np.empty((T, L), dtype=np.float64)
    buf_arr = np.empty(L, dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[::1] buf = buf_arr
    with nogil:
        _forward(em, tr, st, alpha, buf)
        for j in range(L):
            buf[j] = alpha[T - 1, j] + en[j]
    return _lse_row(buf, L)


def nll_grad(double[:, ::1] em, double[:, ::1] tr, double[::1] st, double[::1] en,
             long long[::1] tags):
    """Negative log-likelihood of ``tags`` and its gradient w.r.t. every input."""
    cdef Py_ssize_t T = em.shape[0], L = em.shape[1]
    cdef Py_ssize_t t, i, j
    cdef double logz, p

    alpha_arr = np.empty((T, L), dtype=np.float64)
    beta_arr = np.empty((T, L), dtype=np.float64)
    buf_arr = np.empty(L, dtype=np.float64)
    g_em_arr = np.zeros((T, L), dtype=np.float64)
    g_tr_arr = np.zeros((L, L), dtype=np.float64)
    g_st_arr = np.zeros(L, dtype=np.float64)
    g_en_arr = np.zeros(L, dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[::1] buf = buf_arr
    cdef double[:, ::1] g_em = g_em_arr
    cdef double[:, ::1] g_tr = g_tr_arr
    cdef double[::1] g_st = g_st_arr
    cdef double[::1] g_en = g_en_arr

    with nogil:
        _forward(em, tr, st, alpha, buf)
        for j in range(L):
            buf[j] = alpha[T - 1, j] + en[j]
        logz = _lse_row(buf, L)

        for i in range(L):
            beta[T - 1, i] = en[i]
        for t in range(T - 2, -1, -1):
            for i in range(L):
                for j in range(L):
                    buf[j] = tr[i, j] + em[t + 1, j] + beta[t + 1, j]
                beta[t, i] = _lse_row(buf, L)

        for t in range(T):
            for j in range(L):
                g_em[t, j] = exp(alpha[t, j] + beta[t, j] - logz)
        for j in range(L):
            g_st[j] = g_em[0, j]
            g_en[j] = g_em[T - 1, j]
        for t in range(T - 1):
            for i in range(L):
                for j in range(L):
                    p = exp(alpha[t, i] + tr[i, j] + em[t + 1, j] + beta[t + 1, j] - logz)
                    g_tr[i, j] += p

        g_st[tags[0]] -= 1.0
        g_en[tags[T - 1]] -= 1.0
        for t in range(T):
            g_em[t, tags[t]] -= 1.0
        for t in range(T - 1):
            g_tr[tags[t], tags[t + 1]] -= 1.0

    return logz - _path_score(em, tr, st, en, tags), g_em_arr, g_tr_arr, g_st_arr, g_en_arr


def viterbi(double[:, ::1] em, double[:, ::1] tr, double[::1] st, double[::1] en):
    """Best path; ties go to the lowest label index at every backtracking step."""
    cdef Py_ssize_t T = em.shape[0], L = em.shape[1]
    cdef Py_ssize_t t, i, j, best_i
    cdef double best, cand

    delta_arr = np.empty((T, L), dtype=np.float64)
    back_arr = np.zeros((T, L), dtype=np.int64)
    path_arr = np.empty(T, dtype=np.int64)
    cdef double[:, ::1] delta = delta_arr
    cdef long long[:, ::1] back = back_arr
    cdef long long[::1] path = path_arr

    with nogil:
        for j in range(L):
            delta[0, j] = st[j] + em[0, j]
        for t in range(1, T):
            for j in range(L):
                best = delta[t - 1, 0] + tr[0, j]
                best_i = 0
                for i in range(1, L):
                    cand = delta[t - 1, i] + tr[i, j]
                    if cand > best:
                        best = cand
                        best_i = i
                delta[t, j] = best + em[t, j]
                back[t, j] = best_i
        best = delta[T - 1, 0] + en[0]
        best_i = 0
        for j in range(1, L):
            cand = delta[T - 1, j] + en[j]
            if cand > best:
                best = cand
                best_i = j
        path[T - 1] = best_i
        for t in range(T - 1, 0, -1):
            path[t - 1] = back[t, path[t]]
    return path_arr, best
