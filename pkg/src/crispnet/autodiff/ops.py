"""Differentiable primitives.

Each primitive is a small class with ``forward(ctx, *arrays, **params)``
returning a float array and ``backward(ctx, gout)`` returning one gradient
per input (``None`` where not differentiable). Reductions, matmuls and
convolutions accumulate in float64 and store float32.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import erf

from . import kernels
from .tensor import DTYPE, NumericalInstabilityError, ShapeError, Tensor, active_graph

F64 = np.float64


class Ctx:
    __slots__ = ("saved", "params")

    def __init__(self, params):
        self.saved = ()
        self.params = params


class Primitive:
    name = "primitive"
    n_inputs: int | None = None

    @classmethod
    def check(cls, shapes, params):  # pragma: no cover - overridden where rules exist
        return None

    @staticmethod
    def forward(ctx, *arrays, **params):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, gout):
        raise NotImplementedError


PRIMITIVES: dict[str, type[Primitive]] = {}


def register(cls):
    PRIMITIVES[cls.name] = cls
    return cls


def apply(op, inputs: Sequence[Tensor], **params) -> Tensor:
    """Run primitive ``op`` (name or class) on ``inputs``.

    The application is recorded on the active graph when a graph scope is
    open and at least one input requires grad.
    """
    fn = PRIMITIVES[op] if isinstance(op, str) else op
    inputs = [x if isinstance(x, Tensor) else Tensor(x) for x in inputs]
    if fn.n_inputs is not None and len(inputs) != fn.n_inputs:
        raise ShapeError(f"{fn.name}: expected {fn.n_inputs} inputs, got {len(inputs)}")
    fn.check([t.shape for t in inputs], params)
    graph = active_graph()
    record = graph is not None and any(t.requires_grad for t in inputs)
    ctx = Ctx(params)
    with np.errstate(over="ignore", invalid="ignore"):  # surfaces as inf/nan and is reported below
        out = np.asarray(fn.forward(ctx, *(t.data for t in inputs), **params))
        if out.dtype != DTYPE:
            out = out.astype(DTYPE)
    if not np.isfinite(out).all():
        raise NumericalInstabilityError(
            f"{fn.name}: non-finite output for input shapes {[t.shape for t in inputs]}"
        )
    res = Tensor.__new__(Tensor)
    res.data = out
    res.grad = None
    res.node = None
    res.name = None
    res.requires_grad = record
    if record:
        graph.record(fn, inputs, res, ctx)
    return res


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(name, shapes):
    try:
        np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {shapes[0]} and {shapes[1]}") from None


# --------------------------------------------------------------- elementwise


@register
class Add(Primitive):
    name = "add"
    n_inputs = 2

    @classmethod
    def check(cls, shapes, params):
        _broadcast_check(cls.name, shapes)

    @staticmethod
    def forward(ctx, a, b):
        ctx.saved = (a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx.saved
        return _unbroadcast(g, sa), _unbroadcast(g, sb)


@register
class Sub(Add):
    name = "sub"

    @staticmethod
    def forward(ctx, a, b):
        ctx.saved = (a.shape, b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx.saved
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)


@register
class Mul(Primitive):
    name = "mul"
    n_inputs = 2

    @classmethod
    def check(cls, shapes, params):
        _broadcast_check(cls.name, shapes)

    @staticmethod
    def forward(ctx, a, b):
        ctx.saved = (a, b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


@register
class ChannelMul(Primitive):
    """Scale channel ``c`` of an (N, C, ...) map by ``v[c]`` or ``v[n, c]``."""

    name = "channel_mul"
    n_inputs = 2

    @classmethod
    def check(cls, shapes, params):
        x, v = shapes
        ok = len(x) >= 2 and (v == (x[1],) or v == (x[0], x[1]))
        if not ok:
            raise ShapeError(f"{cls.name}: feature map {x} cannot be scaled by vector {v}")

    @staticmethod
    def _expand(v, ndim):
        if v.ndim == 1:
            return v.reshape((1, -1) + (1,) * (ndim - 2))
        return v.reshape(v.shape + (1,) * (ndim - 2))

    @classmethod
    def forward(cls, ctx, x, v):
        ve = cls._expand(v, x.ndim)
        ctx.saved = (x, v, ve)
        return x * ve

    @staticmethod
    def backward(ctx, g):
        x, v, ve = ctx.saved
        gx = g * ve
        gv = (g.astype(F64) * x).sum(axis=tuple(range(2, x.ndim)))
        if v.ndim == 1:
            gv = gv.sum(axis=0)
        return gx, gv


@register
class Scale(Primitive):
    name = "scale"
    n_inputs = 1

    @staticmethod
    def forward(ctx, x, factor):
        return x * DTYPE(factor)

    @staticmethod
    def backward(ctx, g):
        return (g * ctx.params["factor"],)


@register
class Relu(Primitive):
    name = "relu"
    n_inputs = 1

    @staticmethod
    def forward(ctx, x):
        mask = x > 0
        ctx.saved = (mask,)
        return x * mask

    @staticmethod
    def backward(ctx, g):
        return (g * ctx.saved[0],)


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@register
class Gelu(Primitive):
    """Exact (erf) GELU."""

    name = "gelu"
    n_inputs = 1

    @staticmethod
    def forward(ctx, x):
        x64 = x.astype(F64)
        cdf = 0.5 * (1.0 + erf(x64 * _SQRT1_2))
        ctx.saved = (x64, cdf)
        return x64 * cdf

    @staticmethod
    def backward(ctx, g):
        x, cdf = ctx.saved
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)


# ---------------------------------------------------------------- reductions


@register
class Sum(Primitive):
    name = "sum"
    n_inputs = 1

    @staticmethod
    def forward(ctx, x, axis=None, keepdims=False):
        ctx.saved = (x.shape,)
        return np.sum(x, axis=axis, dtype=F64, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        (shape,) = ctx.saved
        axis, keepdims = ctx.params.get("axis"), ctx.params.get("keepdims", False)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).astype(F64),)


@register
class Mse(Primitive):
    """Mean squared error between two equally shaped tensors."""

    name = "mse"
    n_inputs = 2

    @classmethod
    def check(cls, shapes, params):
        if shapes[0] != shapes[1]:
            raise ShapeError(f"{cls.name}: shapes differ, {shapes[0]} vs {shapes[1]}")

    @staticmethod
    def forward(ctx, a, b):
        d = a.astype(F64) - b
        ctx.saved = (d,)
        return np.mean(d * d)

    @staticmethod
    def backward(ctx, g):
        (d,) = ctx.saved
        gd = (2.0 / d.size) * float(g) * d
        return gd, -gd


# ---------------------------------------------------------------- linear algebra


@register
class Matmul(Primitive):
    """Batched ``a @ b`` with (..., m, k) x (..., k, n) broadcasting."""

    name = "matmul"
    n_inputs = 2

    @classmethod
    def check(cls, shapes, params):
        a, b = shapes
        if len(a) < 2 or len(b) < 2 or a[-1] != b[-2]:
            raise ShapeError(f"{cls.name}: incompatible shapes {a} and {b}")
        try:
            np.broadcast_shapes(a[:-2], b[:-2])
        except ValueError:
            raise ShapeError(f"{cls.name}: batch dims of {a} and {b} do not broadcast") from None

    @staticmethod
    def forward(ctx, a, b):
        a64, b64 = a.astype(F64), b.astype(F64)
        ctx.saved = (a64, b64)
        return a64 @ b64

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        ga = g @ np.swapaxes(b, -1, -2)
        gb = np.swapaxes(a, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


# ---------------------------------------------------------------- convolution


def _pad(x, pad):
    if pad == 0:
        return np.ascontiguousarray(x, dtype=F64)
    return np.pad(x.astype(F64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _conv_out(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


@register
class Conv2d(Primitive):
    """NCHW convolution; weight (O, C, kh, kw); optional bias (O,)."""

    name = "conv2d"

    @classmethod
    def check(cls, shapes, params):
        if len(shapes) not in (2, 3):
            raise ShapeError(f"{cls.name}: expected input, weight[, bias]")
        x, w = shapes[0], shapes[1]
        if len(x) != 4 or len(w) != 4 or x[1] != w[1]:
            raise ShapeError(f"{cls.name}: input {x} incompatible with weight {w}")
        if len(shapes) == 3 and shapes[2] != (w[0],):
            raise ShapeError(f"{cls.name}: bias {shapes[2]} does not match weight {w}")
        stride, pad = params.get("stride", 1), params.get("pad", 0)
        if _conv_out(x[2], w[2], stride, pad) < 1 or _conv_out(x[3], w[3], stride, pad) < 1:
            raise ShapeError(f"{cls.name}: input {x} too small for weight {w}")

    @staticmethod
    def forward(ctx, x, w, b=None, stride=1, pad=0):
        n, c, h, wd = x.shape
        o, _, kh, kw = w.shape
        xp = _pad(x, pad)
        ho, wo = _conv_out(h, kh, stride, pad), _conv_out(wd, kw, stride, pad)
        cols = kernels.im2col(xp, kh, kw, stride)
        wmat = w.reshape(o, -1).astype(F64)
        out = cols @ wmat.T
        if b is not None:
            out += b
        ctx.saved = (cols, wmat, xp.shape, w.shape, b is not None)
        return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    @staticmethod
    def backward(ctx, g):
        cols, wmat, (n, c, hp, wp), wshape, has_b = ctx.saved
        stride, pad = ctx.params.get("stride", 1), ctx.params.get("pad", 0)
        o, _, kh, kw = wshape
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1), dtype=F64).reshape(-1, o)
        gw = (g2.T @ cols).reshape(wshape)
        gcols = g2 @ wmat
        gxp = kernels.col2im(gcols, n, c, hp, wp, kh, kw, stride)
        gx = gxp[:, :, pad:hp - pad, pad:wp - pad] if pad else gxp
        grads = (gx, gw)
        if has_b:
            grads += (g2.sum(axis=0),)
        return grads


@register
class DepthwiseConv2d(Primitive):
    """Per-channel convolution; weight (C, 1, kh, kw); optional bias (C,)."""

    name = "depthwise_conv2d"

    @classmethod
    def check(cls, shapes, params):
        x, w = shapes[0], shapes[1]
        if len(x) != 4 or len(w) != 4 or w[0] != x[1] or w[1] != 1:
            raise ShapeError(f"{cls.name}: input {x} incompatible with weight {w}")
        if len(shapes) == 3 and shapes[2] != (w[0],):
            raise ShapeError(f"{cls.name}: bias {shapes[2]} does not match weight {w}")

    @staticmethod
    def forward(ctx, x, w, b=None, stride=1, pad=0):
        n, c, h, wd = x.shape
        _, _, kh, kw = w.shape
        xp = _pad(x, pad)
        ho, wo = _conv_out(h, kh, stride, pad), _conv_out(wd, kw, stride, pad)
        cols = kernels.im2col(xp, kh, kw, stride).reshape(n * ho * wo, c, kh * kw)
        wk = w.reshape(c, kh * kw).astype(F64)
        out = np.einsum("rck,ck->rc", cols, wk)
        if b is not None:
            out += b
        ctx.saved = (cols, wk, xp.shape, w.shape, b is not None)
        return out.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)

    @staticmethod
    def backward(ctx, g):
        cols, wk, (n, c, hp, wp), wshape, has_b = ctx.saved
        stride, pad = ctx.params.get("stride", 1), ctx.params.get("pad", 0)
        _, _, kh, kw = wshape
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1), dtype=F64).reshape(-1, c)
        gw = np.einsum("rck,rc->ck", cols, g2).reshape(wshape)
        gcols = (g2[:, :, None] * wk[None]).reshape(-1, c * kh * kw)
        gxp = kernels.col2im(gcols, n, c, hp, wp, kh, kw, stride)
        gx = gxp[:, :, pad:hp - pad, pad:wp - pad] if pad else gxp
        grads = (gx, gw)
        if has_b:
            grads += (g2.sum(axis=0),)
        return grads


@register
class Upsample2x(Primitive):
    """Nearest-neighbour x2 upsampling of an NCHW map."""

    name = "upsample2x"
    n_inputs = 1

    @classmethod
    def check(cls, shapes, params):
        if len(shapes[0]) != 4:
            raise ShapeError(f"{cls.name}: expected NCHW input, got {shapes[0]}")

    @staticmethod
    def forward(ctx, x):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)

    @staticmethod
    def backward(ctx, g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)


@register
class MaxPool2d(Primitive):
    """2x2 max pooling with stride 2."""

    name = "maxpool2d"
    n_inputs = 1

    @classmethod
    def check(cls, shapes, params):
        x = shapes[0]
        if len(x) != 4 or x[2] % 2 or x[3] % 2:
            raise ShapeError(f"{cls.name}: expected NCHW input with even extents, got {x}")

    @staticmethod
    def forward(ctx, x):
        out, idx = kernels.maxpool2x2(np.ascontiguousarray(x))
        ctx.saved = (idx,)
        return out

    @staticmethod
    def backward(ctx, g):
        return (kernels.maxpool2x2_backward(np.ascontiguousarray(g, dtype=F64), ctx.saved[0]),)


# ---------------------------------------------------------------- shape plumbing


@register
class Concat(Primitive):
    name = "concat"

    @classmethod
    def check(cls, shapes, params):
        axis = params.get("axis", 1)
        ref = list(shapes[0])
        for s in shapes[1:]:
            if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis % len(ref)):
                raise ShapeError(f"{cls.name}: cannot join {tuple(ref)} and {s} along axis {axis}")

    @staticmethod
    def forward(ctx, *xs, axis=1):
        ctx.saved = (np.cumsum([x.shape[axis] for x in xs])[:-1],)
        return np.concatenate(xs, axis=axis)

    @staticmethod
    def backward(ctx, g):
        return tuple(np.split(g, ctx.saved[0], axis=ctx.params.get("axis", 1)))


@register
class Reshape(Primitive):
    name = "reshape"
    n_inputs = 1

    @classmethod
    def check(cls, shapes, params):
        shape = params["shape"]
        if -1 not in shape and math.prod(shape) != math.prod(shapes[0]):
            raise ShapeError(f"{cls.name}: cannot reshape {shapes[0]} to {tuple(shape)}")

    @staticmethod
    def forward(ctx, x, shape):
        ctx.saved = (x.shape,)
        return x.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        return (g.reshape(ctx.saved[0]),)


@register
class Transpose(Primitive):
    name = "transpose"
    n_inputs = 1

    @classmethod
    def check(cls, shapes, params):
        if sorted(params["perm"]) != list(range(len(shapes[0]))):
            raise ShapeError(f"{cls.name}: permutation {params['perm']} invalid for {shapes[0]}")

    @staticmethod
    def forward(ctx, x, perm):
        return np.ascontiguousarray(x.transpose(perm))

    @staticmethod
    def backward(ctx, g):
        return (g.transpose(np.argsort(ctx.params["perm"])),)


@register
class Slice(Primitive):
    """Contiguous range ``[start, stop)`` along one axis."""

    name = "slice"
    n_inputs = 1

    @classmethod
    def check(cls, shapes, params):
        x = shapes[0]
        axis, start, stop = params["axis"], params["start"], params["stop"]
        if not (0 <= start < stop <= x[axis]):
            raise ShapeError(f"{cls.name}: range [{start}, {stop}) out of bounds for axis {axis} of {x}")

    @staticmethod
    def forward(ctx, x, axis, start, stop):
        ctx.saved = (x.shape,)
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, stop)
        return x[tuple(idx)]

    @staticmethod
    def backward(ctx, g):
        (shape,) = ctx.saved
        p = ctx.params
        out = np.zeros(shape, dtype=g.dtype)
        idx = [slice(None)] * len(shape)
        idx[p["axis"]] = slice(p["start"], p["stop"])
        out[tuple(idx)] = g
        return (out,)


# ---------------------------------------------------------------- normalization


@register
class LayerNorm(Primitive):
    """Normalise over the last axis with learnable scale and shift."""

    name = "layernorm"
    n_inputs = 3

    @classmethod
    def check(cls, shapes, params):
        x, gamma, beta = shapes
        if gamma != (x[-1],) or beta != (x[-1],):
            raise ShapeError(f"{cls.name}: affine {gamma}/{beta} does not match input {x}")

    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-5):
        x64 = x.astype(F64)
        mu = x64.mean(axis=-1, keepdims=True)
        xc = x64 - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
        xhat = xc * inv
        ctx.saved = (xhat, inv, gamma.astype(F64))
        return xhat * gamma + beta

    @staticmethod
    def backward(ctx, g):
        xhat, inv, gamma = ctx.saved
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gx_hat = g * gamma
        d = xhat.shape[-1]
        gx = inv / d * (d * gx_hat - gx_hat.sum(-1, keepdims=True) - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        return gx, ggamma, gbeta


@register
class BatchNorm2d(Primitive):
    """Batch normalisation over (N, H, W) per channel.

    In training mode the batch statistics are used and ``running`` (a dict
    holding ``mean`` and ``var`` arrays) is updated in place; in evaluation
    mode the running statistics are used.
    """

    name = "batchnorm2d"
    n_inputs = 3

    @classmethod
    def check(cls, shapes, params):
        x, gamma, beta = shapes
        if len(x) != 4 or gamma != (x[1],) or beta != (x[1],):
            raise ShapeError(f"{cls.name}: affine {gamma}/{beta} does not match input {x}")

    @staticmethod
    def forward(ctx, x, gamma, beta, running, training=True, momentum=0.1, eps=1e-5):
        x64 = x.astype(F64)
        if training:
            mu = x64.mean(axis=(0, 2, 3))
            var = x64.var(axis=(0, 2, 3))
            m = x.shape[0] * x.shape[2] * x.shape[3]
            unbiased = var * m / max(m - 1, 1)
            running["mean"][...] = (1 - momentum) * running["mean"] + momentum * mu
            running["var"][...] = (1 - momentum) * running["var"] + momentum * unbiased
        else:
            mu = running["mean"].astype(F64)
            var = running["var"].astype(F64)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (x64 - mu[None, :, None, None]) * inv[None, :, None, None]
        ctx.saved = (xhat, inv, gamma.astype(F64), training)
        return xhat * gamma[None, :, None, None] + beta[None, :, None, None]

    @staticmethod
    def backward(ctx, g):
        xhat, inv, gamma, training = ctx.saved
        axes = (0, 2, 3)
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxh = g * gamma[None, :, None, None]
        if not training:
            return gxh * inv[None, :, None, None], ggamma, gbeta
        m = g.shape[0] * g.shape[2] * g.shape[3]
        gx = (inv[None, :, None, None] / m) * (
            m * gxh
            - gxh.sum(axis=axes, keepdims=True)
            - xhat * (gxh * xhat).sum(axis=axes, keepdims=True)
        )
        return gx, ggamma, gbeta


@register
class Softmax(Primitive):
    name = "softmax"
    n_inputs = 1

    @staticmethod
    def forward(ctx, x, axis=-1):
        z = x.astype(F64)
        z = z - z.max(axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)
        ctx.saved = (y,)
        return y

    @staticmethod
    def backward(ctx, g):
        (y,) = ctx.saved
        axis = ctx.params.get("axis", -1)
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


@register
class L2Normalize(Primitive):
    """``x / max(||x||, eps)`` along ``axis``."""

    name = "l2_normalize"
    n_inputs = 1

    @staticmethod
    def forward(ctx, x, axis=-1, eps=1e-6):
        x64 = x.astype(F64)
        norm = np.sqrt((x64 * x64).sum(axis=axis, keepdims=True))
        clipped = norm < eps
        denom = np.where(clipped, eps, norm)
        y = x64 / denom
        ctx.saved = (y, denom, clipped)
        return y

    @staticmethod
    def backward(ctx, g):
        y, denom, clipped = ctx.saved
        axis = ctx.params.get("axis", -1)
        proj = np.where(clipped, 0.0, (g * y).sum(axis=axis, keepdims=True))
        return ((g - y * proj) / denom,)


# ---------------------------------------------------------------- functional API


def add(a, b):
    return apply(Add, [a, b])


def sub(a, b):
    return apply(Sub, [a, b])


def mul(a, b):
    return apply(Mul, [a, b])


def channel_mul(x, v):
    return apply(ChannelMul, [x, v])


def scale(x, factor: float):
    return apply(Scale, [x], factor=float(factor))


def relu(x):
    return apply(Relu, [x])


def gelu(x):
    return apply(Gelu, [x])


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    return apply(Sum, [x], axis=axis, keepdims=keepdims)


def mse(a, b):
    return apply(Mse, [a, b])


def matmul(a, b):
    return apply(Matmul, [a, b])


def conv2d(x, w, b=None, stride=1, pad=0):
    ins = [x, w] if b is None else [x, w, b]
    return apply(Conv2d, ins, stride=stride, pad=pad)


def depthwise_conv2d(x, w, b=None, stride=1, pad=0):
    ins = [x, w] if b is None else [x, w, b]
    return apply(DepthwiseConv2d, ins, stride=stride, pad=pad)


def upsample2x(x):
    return apply(Upsample2x, [x])


def maxpool2d(x):
    return apply(MaxPool2d, [x])


def concat(xs, axis=1):
    return apply(Concat, list(xs), axis=axis)


def reshape(x, shape):
    return apply(Reshape, [x], shape=tuple(shape))


def transpose(x, perm):
    return apply(Transpose, [x], perm=tuple(perm))


def slice_axis(x, axis, start, stop):
    return apply(Slice, [x], axis=axis, start=start, stop=stop)


def layernorm(x, gamma, beta, eps=1e-5):
    return apply(LayerNorm, [x, gamma, beta], eps=eps)


def batchnorm2d(x, gamma, beta, running, training=True, momentum=0.1, eps=1e-5):
    return apply(BatchNorm2d, [x, gamma, beta], running=running, training=training, momentum=momentum, eps=eps)


def softmax(x, axis=-1):
    return apply(Softmax, [x], axis=axis)


def l2_normalize(x, axis=-1, eps=1e-6):
    return apply(L2Normalize, [x], axis=axis, eps=eps)


def linear(x, w, b=None):
    """``x @ w.T + b`` over the last axis; ``w`` is (out, in)."""
    y = matmul(x, transpose(w, (1, 0)))
    return y if b is None else add(y, b)
