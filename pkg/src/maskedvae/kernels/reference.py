"""Pure-numpy patch gather/scatter kernels.

These are the fallback implementations used when the compiled extension is
unavailable.  Both backends share the same layout conventions:

* images are NHWC, C-contiguous
* ``im2col`` turns a (pre-padded) image batch into per-output-position patch
  rows of length ``k*k*C``, ordered (ki, kj, c), ready for a single matmul
  against a ``(k*k*C, filters)`` weight matrix
* ``col2im`` is its exact adjoint (scatter-add)
"""

import numpy as np


def im2col(xp, k, stride):
    """(N, H, W, C) padded input -> (N, OH, OW, k*k*C) patch rows."""
    n, h, w, c = xp.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    cols = np.empty((n, oh, ow, k, k, c), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[
                :, i : i + stride * oh : stride, j : j + stride * ow : stride, :
            ]
    return cols.reshape(n, oh, ow, k * k * c)


def col2im(cols, h, w, c, k, stride):
    """Adjoint of :func:`im2col`: scatter-add patch rows back to (N, H, W, C)."""
    n, oh, ow, _ = cols.shape
    cols6 = cols.reshape(n, oh, ow, k, k, c)
    xp = np.zeros((n, h, w, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[
                :, i : i + stride * oh : stride, j : j + stride * ow : stride, :
            ] += cols6[:, :, :, i, j, :]
    return xp
