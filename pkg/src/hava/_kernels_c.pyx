# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot kernels.

Contract-identical to ``_kernels_np``: graph neighbor sums over CSR
adjacency and valid 1-D cross-correlation with its two adjoints. All
float64, C-contiguous; the wrapper in ``hava.kernels`` normalizes inputs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"


cdef inline int _lex_less(const double *x, const double *y, Py_ssize_t f) noexcept nogil:
    cdef Py_ssize_t j
    for j in range(f):
        if x[j] < y[j]:
            return 1
        if x[j] > y[j]:
            return 0
    return 0


def neighbor_sum(double[:, :, ::1] h, long long[::1] indptr, long long[::1] indices):
    # Per-vertex sums accumulate neighbor rows in lexicographic row
    # order, a total order on the row values themselves, so the result
    # depends only on the multiset of neighbor rows and relabeling the
    # graph permutes the output bit-exactly. Generic data decides each
    # comparison at the first column, so the sort costs ~d^2/2 loads
    # while the summation stays contiguous row adds.
    cdef Py_ssize_t b = h.shape[0], n = h.shape[1], f = h.shape[2]
    cdef Py_ssize_t i, v, e, j, d, t, lo
    cdef Py_ssize_t maxd = 0
    for v in range(n):
        d = indptr[v + 1] - indptr[v]
        if d > maxd:
            maxd = d
    out_arr = np.zeros((b, n, f), dtype=np.float64)
    if maxd == 0:
        return out_arr
    cdef double[:, :, ::1] out = out_arr
    order_arr = np.empty(maxd, dtype=np.int64)
    cdef long long[::1] order = order_arr
    cdef long long u
    cdef const double *row
    for i in range(b):
        for v in range(n):
            lo = indptr[v]
            d = indptr[v + 1] - lo
            for e in range(d):
                u = indices[lo + e]
                row = &h[i, u, 0]
                t = e
                while t > 0 and _lex_less(row, &h[i, order[t - 1], 0], f):
                    order[t] = order[t - 1]
                    t -= 1
                order[t] = u
            for e in range(d):
                u = order[e]
                for j in range(f):
                    out[i, v, j] += h[i, u, j]
    return out_arr


def matmul_rowstable(double[:, ::1] a, double[:, ::1] b):
    # out[i, j] accumulates a[i, k] * b[k, j] over ascending k, so each
    # output row is a function of its input row alone; permuting the
    # rows of ``a`` permutes the product bit-exactly. The j loop is
    # tiled so the accumulators live in registers across the k loop.
    cdef Py_ssize_t m = a.shape[0], k = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, i0, i1, kk, j0, jj, rem
    cdef double aik
    cdef double acc[16]
    cdef const double *arow
    cdef const double *brow
    cdef double *orow
    out_arr = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    # row blocks keep the streamed b panel hot in L1 and each a block
    # hot in L2; the (i, j0) tile arithmetic itself never changes
    for i0 in range(0, m, 64):
        i1 = i0 + 64
        if i1 > m:
            i1 = m
        j0 = 0
        while j0 + 16 <= n:
            for i in range(i0, i1):
                for jj in range(16):
                    acc[jj] = 0.0
                arow = &a[i, 0]
                for kk in range(k):
                    aik = arow[kk]
                    brow = &b[kk, j0]
                    for jj in range(16):
                        acc[jj] += aik * brow[jj]
                orow = &out[i, j0]
                for jj in range(16):
                    orow[jj] = acc[jj]
            j0 += 16
        rem = n - j0
        if rem > 0:
            for i in range(i0, i1):
                for jj in range(rem):
                    acc[jj] = 0.0
                arow = &a[i, 0]
                for kk in range(k):
                    aik = arow[kk]
                    brow = &b[kk, j0]
                    for jj in range(rem):
                        acc[jj] += aik * brow[jj]
                orow = &out[i, j0]
                for jj in range(rem):
                    orow[jj] = acc[jj]
    return out_arr


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] k, Py_ssize_t stride):
    cdef Py_ssize_t b = x.shape[0], c_in = x.shape[1], t = x.shape[2]
    cdef Py_ssize_t c_out = k.shape[0], kw = k.shape[2]
    cdef Py_ssize_t t_out = (t - kw) // stride + 1
    cdef Py_ssize_t i, o, tp, ic, dk, base
    cdef double acc
    out_arr = np.empty((b, c_out, t_out), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    for i in range(b):
        for o in range(c_out):
            for tp in range(t_out):
                base = tp * stride
                acc = 0.0
                for ic in range(c_in):
                    for dk in range(kw):
                        acc += x[i, ic, base + dk] * k[o, ic, dk]
                out[i, o, tp] = acc
    return out_arr


def conv1d_backward_x(double[:, :, ::1] gout, double[:, :, ::1] k,
                      Py_ssize_t stride, Py_ssize_t t_in):
    cdef Py_ssize_t b = gout.shape[0], c_out = gout.shape[1], t_out = gout.shape[2]
    cdef Py_ssize_t c_in = k.shape[1], kw = k.shape[2]
    cdef Py_ssize_t i, o, tp, ic, dk, base
    cdef double g
    gx_arr = np.zeros((b, c_in, t_in), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    for i in range(b):
        for o in range(c_out):
            for tp in range(t_out):
                base = tp * stride
                g = gout[i, o, tp]
                for ic in range(c_in):
                    for dk in range(kw):
                        gx[i, ic, base + dk] += g * k[o, ic, dk]
    return gx_arr


def conv1d_backward_k(double[:, :, ::1] gout, double[:, :, ::1] x,
                      Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = gout.shape[0], c_out = gout.shape[1], t_out = gout.shape[2]
    cdef Py_ssize_t c_in = x.shape[1]
    cdef Py_ssize_t i, o, tp, ic, dk, base
    cdef double g
    gk_arr = np.zeros((c_out, c_in, kw), dtype=np.float64)
    cdef double[:, :, ::1] gk = gk_arr
    for i in range(b):
        for o in range(c_out):
            for tp in range(t_out):
                base = tp * stride
                g = gout[i, o, tp]
                for ic in range(c_in):
                    for dk in range(kw):
                        gk[o, ic, dk] += g * x[i, ic, base + dk]
    return gk_arr
