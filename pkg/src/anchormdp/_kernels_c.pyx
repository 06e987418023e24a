# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_kernels_py``.

Same contracts, scalar loops instead of vectorized numpy; the margin search
additionally exits early once every threshold is answered.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, log1p

cnp.import_array()

BACKEND = "cython"


def epsilon_bar_table(double[:, ::1] w, double[:, ::1] dist):
    cdef Py_ssize_t k = w.shape[0]
    cdef cnp.ndarray[double, ndim=2] logw = np.empty((k, k))
    cdef cnp.ndarray[double, ndim=2] log1w = np.empty((k, k))
    cdef double[:, ::1] lw = logw
    cdef double[:, ::1] l1w = log1w
    cdef Py_ssize_t i, j, n, m, x
    for i in range(k):
        for j in range(k):
            lw[i, j] = log(w[i, j])
            l1w[i, j] = log1p(-w[i, j])
    cdef cnp.ndarray[double, ndim=2] out_arr = np.zeros((k, k))
    cdef double[:, ::1] out = out_arr
    cdef double a, b, hi, lo, cost
    with nogil:
        for n in range(k):
            for m in range(k):
                if n == m:
                    continue
                hi = 0.0
                lo = 0.0
                for x in range(k):
                    a = lw[n, x] - lw[m, x]
                    b = l1w[n, x] - l1w[m, x]
                    if a > b:
                        hi += a
                        lo += b
                    else:
                        hi += b
                        lo += a
                cost = hi if hi > -lo else -lo
                out[n, m] = cost / dist[n, m]
    return out_arr


def surrogate_prob_table(double[:, ::1] w, double[:, ::1] dist):
    cdef Py_ssize_t k = w.shape[0]
    cdef Py_ssize_t i, r
    cdef cnp.ndarray[double, ndim=2] v_arr = np.empty((k, k))
    cdef double[:, ::1] v = v_arr
    idx = np.arange(k)
    dist_arr = np.asarray(dist)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order
    cdef cnp.int64_t[::1] o
    cdef double miss, wx
    for i in range(k):
        order = np.lexsort((idx, dist_arr[i]))
        o = order
        miss = 1.0
        for r in range(k):
            wx = w[i, o[r]]
            v[i, o[r]] = wx * miss
            miss *= 1.0 - wx
    return v_arr


def margin_search_multi(
    double[::1] e_sorted,
    cnp.int64_t[::1] order_i,
    cnp.int64_t[::1] order_j,
    double[::1] va,
    double[::1] vb,
    cnp.uint8_t[::1] mask,
    double[::1] taus,
):
    cdef Py_ssize_t n = e_sorted.shape[0]
    cdef Py_ssize_t nt = taus.shape[0]
    cdef cnp.ndarray[double, ndim=1] vals_arr = np.empty(nt)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] feas_arr = np.zeros(nt, dtype=np.uint8)
    cdef double[::1] vals = vals_arr
    cdef cnp.uint8_t[::1] feas = feas_arr
    # answer thresholds in ascending order so one sweep serves them all
    cdef cnp.ndarray[cnp.int64_t, ndim=1] torder_arr = np.argsort(np.asarray(taus), kind="stable")
    cdef cnp.int64_t[::1] torder = torder_arr
    cdef Py_ssize_t k = 0, t = 0
    cdef double acc = 0.0, gval, tau
    with nogil:
        while t < nt and k < n:
            gval = e_sorted[k]
            # fold in the whole tie group before testing thresholds
            while k < n and e_sorted[k] == gval:
                if mask[k]:
                    acc += va[order_i[k]] * vb[order_j[k]]
                k += 1
            while t < nt:
                tau = taus[torder[t]]
                if acc >= tau:
                    vals[torder[t]] = gval
                    feas[torder[t]] = 1
                    t += 1
                else:
                    break
        while t < nt:
            vals[torder[t]] = e_sorted[n - 1]
            feas[torder[t]] = 0
            t += 1
    return vals_arr, feas_arr.view(np.bool_)
