"""Hot convolution/pooling kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``CRISP_KERNELS=python`` forces the fallback.
"""
import functools
import os

import numpy as np

from . import _fallback

BACKEND = "python"
_impl = _fallback
if os.environ.get("CRISP_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback



def _c_order(fn):
    # compiled kernels take C-contiguous buffers; transposed or padded views
    # (np.pad keeps Fortran order) are copied first
    @functools.wraps(fn)
    def call(*args):
        return fn(*(np.ascontiguousarray(a) if isinstance(a, np.ndarray) else a for a in args))

    return call


_wrap = _c_order if BACKEND == "cython" else (lambda fn: fn)
im2col = _wrap(_impl.im2col)
col2im = _wrap(_impl.col2im)
maxpool2x2 = _wrap(_impl.maxpool2x2)
maxpool2x2_backward = _wrap(_impl.maxpool2x2_backward)

__all__ = ["BACKEND", "im2col", "col2im", "maxpool2x2", "maxpool2x2_backward"]
