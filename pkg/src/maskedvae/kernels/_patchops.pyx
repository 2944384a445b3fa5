# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch gather/scatter kernels.

See kernels/reference.py for the layout contract.  im2col copies whole
channel runs with memcpy.  col2im gathers: each output element accumulates
its patch contributions in ascending (ki, kj) order, the same per-element
addition order as the reference's (ki, kj)-outer slice adds, so the two
backends produce bit-identical results while reading the patch matrix once.
"""

from libc.string cimport memcpy

import numpy as np

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int k, int stride):
    cdef Py_ssize_t n = xp.shape[0], h = xp.shape[1], w = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.empty((n, oh, ow, k * k * c), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, ki, row_w = w * c, run = k * c
    cdef real *dst
    cdef const real *src_row
    with nogil:
        for b in range(n):
            for i in range(oh):
                for j in range(ow):
                    dst = &out[b, i, j, 0]
                    # one (ki) row of the patch = k*c contiguous source floats
                    src_row = &xp[b, i * stride, j * stride, 0]
                    for ki in range(k):
                        memcpy(dst, src_row, run * sizeof(real))
                        dst += run
                        src_row += row_w
    return out_arr


def col2im(real[:, :, :, ::1] cols, int h, int w, int c, int k, int stride):
    cdef Py_ssize_t n = cols.shape[0], oh = cols.shape[1], ow = cols.shape[2]
    if real is float:
        dtype = np.float32
    else:
        dtype = np.float64
    out_arr = np.zeros((n, h, w, c), dtype=dtype)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, io, jo, i, j, ki, kj, ch, t, u
    cdef real *dst
    cdef const real *src
    with nogil:
        for b in range(n):
            for io in range(h):
                for jo in range(w):
                    dst = &out[b, io, jo, 0]
                    for ki in range(k):
                        t = io - ki
                        if t < 0:
                            break
                        if t % stride != 0:
                            continue
                        i = t // stride
                        if i >= oh:
                            continue
                        for kj in range(k):
                            u = jo - kj
                            if u < 0:
                                break
                            if u % stride != 0:
                                continue
                            j = u // stride
                            if j >= ow:
                                continue
                            src = &cols[b, i, j, (ki * k + kj) * c]
                            for ch in range(c):
                                dst[ch] += src[ch]
    return out_arr
