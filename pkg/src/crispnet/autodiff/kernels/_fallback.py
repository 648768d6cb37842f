"""Pure-numpy implementations of the convolution and pooling kernels.

These must stay bit-identical to the compiled versions in ``_ckernels.pyx``:
same copy layout for im2col, and for col2im every output element sums its
terms in descending (ki, kj) order.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride):
    """(N, C, Hp, Wp) float64 -> (N*Ho*Wo, C*kh*kw) float64."""
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :ho, :wo]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)


def col2im(cols, n, c, hp, wp, kh, kw, stride):
    """Adjoint of :func:`im2col`; returns float64 (N, C, Hp, Wp)."""
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols6 = cols.reshape(n, ho, wo, c, kh, kw)
    out = np.zeros((n, c, hp, wp), dtype=np.float64)
    for i in reversed(range(kh)):
        for j in reversed(range(kw)):
            out[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += (
                cols6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def maxpool2x2(x):
    """Returns (pooled, argmax) where argmax in [0, 4) indexes the 2x2 cell row-major.

    Ties resolve to the first position.
    """
    n, c, h, w = x.shape
    cells = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(cells, axis=-1).astype(np.int8)
    out = np.take_along_axis(cells, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2x2_backward(gout, idx):
    n, c, h2, w2 = gout.shape
    cells = np.zeros((n, c, h2, w2, 4), dtype=gout.dtype)
    np.put_along_axis(cells, idx[..., None].astype(np.intp), gout[..., None], axis=-1)
    return cells.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * 2, w2 * 2)
