# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled convolution and pooling kernels (see _fallback.py for the contract)."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def im2col(double[:, :, :, ::1] xp, int kh, int kw, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out_arr = np.empty((n * ho * wo, c * kh * kw), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, ch, i, j, row, col
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    row = (b * ho + y) * wo + x
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[row, col] = xp[b, ch, y * stride + i, x * stride + j]
                                col += 1
    return out_arr


def col2im(double[:, ::1] cols, int n, int c, int hp, int wp, int kh, int kw, int stride):
    cdef Py_ssize_t ho = (hp - kh) // stride + 1
    cdef Py_ssize_t wo = (wp - kw) // stride + 1
    out_arr = np.zeros((n, c, hp, wp), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, y, x, ch, i, j, row, col
    # cols is read sequentially; each output element receives its terms in
    # descending (i, j) order, which the numpy path reproduces
    with nogil:
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    row = (b * ho + y) * wo + x
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                out[b, ch, y * stride + i, x * stride + j] += cols[row, col]
                                col += 1
    return out_arr


def maxpool2x2(x_in):
    x_arr = np.ascontiguousarray(x_in)
    cdef Py_ssize_t n = x_arr.shape[0], c = x_arr.shape[1], h = x_arr.shape[2], w = x_arr.shape[3]
    out_arr = np.empty((n, c, h // 2, w // 2), dtype=x_arr.dtype)
    idx_arr = np.empty((n, c, h // 2, w // 2), dtype=np.int8)
    if x_arr.dtype == np.float32:
        _pool_f(x_arr, out_arr, idx_arr)
    else:
        _pool_d(x_arr.astype(np.float64, copy=False), out_arr, idx_arr)
    return out_arr, idx_arr


cdef void _pool_f(float[:, :, :, ::1] x, float[:, :, :, ::1] out, cnp.int8_t[:, :, :, ::1] idx) noexcept nogil:
    cdef Py_ssize_t b, ch, y, xx, k
    cdef float best, v
    cdef cnp.int8_t arg
    for b in range(x.shape[0]):
        for ch in range(x.shape[1]):
            for y in range(out.shape[2]):
                for xx in range(out.shape[3]):
                    best = x[b, ch, 2 * y, 2 * xx]
                    arg = 0
                    for k in range(1, 4):
                        v = x[b, ch, 2 * y + k // 2, 2 * xx + k % 2]
                        if v > best:
                            best = v
                            arg = <cnp.int8_t>k
                    out[b, ch, y, xx] = best
                    idx[b, ch, y, xx] = arg


cdef void _pool_d(double[:, :, :, ::1] x, double[:, :, :, ::1] out, cnp.int8_t[:, :, :, ::1] idx) noexcept nogil:
    cdef Py_ssize_t b, ch, y, xx, k
    cdef double best, v
    cdef cnp.int8_t arg
    for b in range(x.shape[0]):
        for ch in range(x.shape[1]):
            for y in range(out.shape[2]):
                for xx in range(out.shape[3]):
                    best = x[b, ch, 2 * y, 2 * xx]
                    arg = 0
                    for k in range(1, 4):
                        v = x[b, ch, 2 * y + k // 2, 2 * xx + k % 2]
                        if v > best:
                            best = v
                            arg = <cnp.int8_t>k
                    out[b, ch, y, xx] = best
                    idx[b, ch, y, xx] = arg


def maxpool2x2_backward(gout_in, idx_in):
    g_arr = np.ascontiguousarray(gout_in, dtype=np.float64)
    cdef cnp.int8_t[:, :, :, ::1] idx = np.ascontiguousarray(idx_in)
    cdef double[:, :, :, ::1] g = g_arr
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], h2 = g.shape[2], w2 = g.shape[3]
    out_arr = np.zeros((n, c, h2 * 2, w2 * 2), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, y, x, k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(h2):
                    for x in range(w2):
                        k = idx[b, ch, y, x]
                        out[b, ch, 2 * y + k // 2, 2 * x + k % 2] = g[b, ch, y, x]
    return out_arr.astype(gout_in.dtype, copy=False)
