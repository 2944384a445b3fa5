"""Patch-op kernels with a compiled fast path and a numpy fallback.

The compiled extension (``maskedvae.kernels._patchops``, built from Cython)
is used when importable; otherwise the pure-numpy reference implementation
takes over.  Set ``MASKEDVAE_KERNELS=numpy`` or ``MASKEDVAE_KERNELS=compiled``
to force a backend (the latter raises if the extension is missing).

Both backends accept float32/float64 C-contiguous NHWC arrays and produce
bit-identical results, so experiment reproducibility does not depend on
which backend is active.
"""

import ctypes
import ctypes.util
import os

import numpy as np

from maskedvae.kernels import reference


def _tune_heap():
    """Keep large allocations on the main heap instead of per-call mmaps.

    The patch matrices and their matmul products run to hundreds of MB and
    are reallocated every step.  glibc serves blocks that big through mmap
    and unmaps them on free, so each step pays full page-fault cost again.
    Raising the mmap/trim thresholds lets freed pages be reused warm.  Best
    effort: silently does nothing where mallopt is unavailable.
    """
    try:
        path = ctypes.util.find_library("c")
        libc = ctypes.CDLL(path) if path else ctypes.CDLL(None)
        m_trim_threshold, m_mmap_threshold = -1, -3
        libc.mallopt(m_mmap_threshold, 1 << 30)
        libc.mallopt(m_trim_threshold, 1 << 30)
    except (OSError, AttributeError, TypeError):
        pass


_tune_heap()

_REQUESTED = os.environ.get("MASKEDVAE_KERNELS", "").strip().lower()
if _REQUESTED not in ("", "numpy", "compiled"):
    raise ValueError(
        f"MASKEDVAE_KERNELS must be 'numpy' or 'compiled', got {_REQUESTED!r}"
    )

_compiled = None
if _REQUESTED != "numpy":
    try:
        from maskedvae.kernels import _patchops as _compiled
    except ImportError:
        if _REQUESTED == "compiled":
            raise
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "numpy"


def _prepare(x):
    if x.dtype not in (np.float32, np.float64):
        raise TypeError(f"kernel ops support float32/float64, got {x.dtype}")
    return np.ascontiguousarray(x)


def im2col(xp, k, stride):
    """(N, H, W, C) padded input -> (N, OH, OW, k*k*C) patch rows."""
    xp = _prepare(xp)
    if _compiled is not None:
        return _compiled.im2col(xp, k, stride)
    return reference.im2col(xp, k, stride)


def col2im(cols, h, w, c, k, stride):
    """Adjoint of im2col: scatter-add patch rows back to (N, H, W, C)."""
    cols = _prepare(cols)
    if _compiled is not None:
        return _compiled.col2im(cols, h, w, c, k, stride)
    return reference.col2im(cols, h, w, c, k, stride)
