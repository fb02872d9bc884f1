# cython: language_level=3
"""Compiled matching kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def pair_scan(labels, gaps, double eps):
    cdef const int[:, ::1] lab = np.ascontiguousarray(labels, dtype=np.int32)
    cdef const double[:, ::1] gap = np.ascontiguousarray(gaps, dtype=np.float64)
    cdef Py_ssize_t n = lab.shape[0]
    cdef Py_ssize_t k = lab.shape[1]
    cdef Py_ssize_t m = gap.shape[1]
    cdef Py_ssize_t i, j, c, cnt = 0, cap = 64
    cdef bint ok
    out_a = np.empty(cap, dtype=np.int64)
    out_b = np.empty(cap, dtype=np.int64)
    cdef cnp.int64_t[::1] oa = out_a
    cdef cnp.int64_t[::1] ob = out_b
    for i in range(n - 1):
        for j in range(i + 1, n):
            ok = True
            for c in range(k):
                if lab[i, c] != lab[j, c]:
                    ok = False
                    break
            if not ok:
                continue
            for c in range(m):
                if not fabs(gap[i, c] - gap[j, c]) <= eps:
                    ok = False
                    break
            if not ok:
                continue
            if cnt == cap:
                cap *= 2
                out_a = np.resize(out_a, cap)
                out_b = np.resize(out_b, cap)
                oa = out_a
                ob = out_b
            oa[cnt] = i
            ob[cnt] = j
            cnt += 1
    return out_a[:cnt].copy(), out_b[:cnt].copy()


def query_scan(q_labels, q_gaps, labels, gaps, Py_ssize_t n, double eps):
    cdef const int[::1] ql = np.ascontiguousarray(q_labels, dtype=np.int32)
    cdef const double[::1] qg = np.ascontiguousarray(q_gaps, dtype=np.float64)
    cdef const int[:, ::1] lab = np.ascontiguousarray(labels[:n], dtype=np.int32)
    cdef const double[:, ::1] gap = np.ascontiguousarray(gaps[:n], dtype=np.float64)
    cdef Py_ssize_t rows = lab.shape[0]
    cdef Py_ssize_t k = lab.shape[1]
    cdef Py_ssize_t m = gap.shape[1]
    cdef Py_ssize_t j, c, cnt = 0
    cdef bint ok
    out = np.empty(rows, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    for j in range(rows):
        ok = True
        for c in range(k):
            if lab[j, c] != ql[c]:
                ok = False
                break
        if not ok:
            continue
        for c in range(m):
            if not fabs(gap[j, c] - qg[c]) <= eps:
                ok = False
                break
        if ok:
            o[cnt] = j
            cnt += 1
    return out[:cnt].copy()
