"""Central-difference verification of primitive gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .tensor import Graph, Tensor, backward

PASS_THRESHOLD = 1e-2


@dataclass
class GradReport:
    op: str
    max_abs_err: float
    max_rel_err: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.op:<18} abs={self.max_abs_err:.3e} rel={self.max_rel_err:.3e}"


def _loss_value(op, arrays, params, weights) -> float:
    out = ops.apply(op, [Tensor(a) for a in arrays], **params)
    return float(np.sum(out.data.astype(np.float64) * weights))


def grad_check(op, inputs, epsilon: float = 1e-3, params: dict | None = None,
               differentiable: tuple[int, ...] | None = None, seed: int = 0) -> GradReport:
    """Compare the analytic backward of ``op`` against central differences.

    The scalar probed is ``sum(out * r)`` for a fixed random ``r``. The
    relative error is normwise: ``max|analytic - numeric|`` divided by the
    largest gradient magnitude of either estimate.
    """
    if not 1e-5 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon must lie in [1e-5, 1e-2], got {epsilon}")
    params = dict(params or {})
    arrays = [np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float32) for x in inputs]
    total = sum(a.size for a in arrays)
    if total >= 1000:
        raise ValueError(f"grad_check is meant for small inputs (< 1000 elements), got {total}")
    which = tuple(range(len(arrays))) if differentiable is None else differentiable
    fn = ops.PRIMITIVES[op] if isinstance(op, str) else op

    probe = ops.apply(fn, [Tensor(a) for a in arrays], **params)
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    leaves = [Tensor(a, requires_grad=(i in which)) for i, a in enumerate(arrays)]
    with Graph() as g:
        out = ops.apply(fn, leaves, **params)
        loss = ops.sum(ops.mul(out, Tensor(weights)))
    backward(g, loss)

    max_abs, scale = 0.0, 0.0
    for i in which:
        analytic = leaves[i].grad.astype(np.float64)
        numeric = np.zeros_like(analytic)
        base = arrays[i]
        for k in range(base.size):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i].flat[k] = base.flat[k] + np.float32(epsilon)
            minus[i].flat[k] = base.flat[k] - np.float32(epsilon)
            step = float(plus[i].flat[k]) - float(minus[i].flat[k])
            numeric.flat[k] = (_loss_value(fn, plus, params, weights) - _loss_value(fn, minus, params, weights)) / step
        max_abs = max(max_abs, float(np.max(np.abs(analytic - numeric), initial=0.0)))
        scale = max(scale, float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    rel = max_abs / scale if scale > 0 else (0.0 if max_abs == 0 else np.inf)
    return GradReport(fn.name, max_abs, rel, rel < PASS_THRESHOLD)


def _spaced(rng, shape, lo=-2.0, hi=2.0):
    """Shuffled, evenly spaced values; keeps max/relu inputs away from ties and kinks."""
    n = int(np.prod(shape))
    step = (hi - lo) / n
    vals = lo + (np.arange(n) + 0.5) * step
    return rng.permutation(vals).reshape(shape)


Case = tuple[str, list, dict, "tuple[int, ...] | None"]


def primitive_cases(seed: int) -> list[Case]:
    """One randomized small instance of every primitive."""
    r = np.random.default_rng(seed)
    n = r.standard_normal
    running = {"mean": np.zeros(3), "var": np.ones(3)}
    return [
        ("add", [n((2, 3, 4)), n((3, 1))], {}, None),
        ("sub", [n((2, 3, 4)), n((4,))], {}, None),
        ("mul", [n((2, 3, 4)), n((2, 3, 1))], {}, None),
        ("channel_mul", [n((2, 3, 4, 4)), n((2, 3))], {}, None),
        ("scale", [n((3, 5))], {"factor": float(r.uniform(-2, 2))}, None),
        ("relu", [_spaced(r, (4, 6))], {}, None),
        ("gelu", [n((4, 6))], {}, None),
        ("sum", [n((3, 4, 2))], {"axis": 1, "keepdims": False}, None),
        ("mse", [n((2, 3, 4)), n((2, 3, 4))], {}, None),
        ("matmul", [n((2, 3)), n((3, 2))], {}, None),
        ("conv2d", [n((2, 3, 6, 6)), 0.3 * n((4, 3, 3, 3)), n((4,))], {"stride": 1, "pad": 1}, None),
        ("conv2d", [n((1, 2, 7, 7)), 0.3 * n((3, 2, 3, 3))], {"stride": 2, "pad": 0}, None),
        ("depthwise_conv2d", [n((2, 3, 5, 5)), 0.3 * n((3, 1, 3, 3)), n((3,))], {"stride": 1, "pad": 1}, None),
        ("upsample2x", [n((1, 2, 3, 4))], {}, None),
        ("maxpool2d", [_spaced(r, (2, 2, 4, 4))], {}, None),
        ("concat", [n((2, 2, 3)), n((2, 1, 3))], {"axis": 1}, None),
        ("reshape", [n((2, 6))], {"shape": (3, 4)}, None),
        ("transpose", [n((2, 3, 4))], {"perm": (2, 0, 1)}, None),
        ("slice", [n((3, 5))], {"axis": 1, "start": 1, "stop": 4}, None),
        ("layernorm", [n((1, 8)), 1 + 0.1 * n((8,)), 0.1 * n((8,))], {"eps": 1e-5}, None),
        ("batchnorm2d", [n((3, 3, 2, 2)), 1 + 0.1 * n((3,)), 0.1 * n((3,))],
         {"running": running, "training": True}, None),
        ("softmax", [n((3, 5))], {"axis": 1}, None),
        ("l2_normalize", [n((4, 3))], {"axis": 0, "eps": 1e-6}, None),
    ]


def run_suite(seeds=range(20), only: str | None = None, epsilon: float = 1e-3,
              report: Callable[[GradReport], None] | None = None) -> dict[str, GradReport]:
    """Grad-check every primitive over ``seeds``; returns the worst report per primitive."""
    worst: dict[str, GradReport] = {}
    for seed in seeds:
        for name, inputs, params, which in primitive_cases(seed):
            if only is not None and name != only:
                continue
            rep = grad_check(name, inputs, epsilon, params, which, seed=seed)
            prev = worst.get(name)
            if prev is None or rep.max_rel_err > prev.max_rel_err:
                worst[name] = rep
    if only is not None and not worst:
        raise KeyError(f"unknown primitive {only!r}; known: {sorted(ops.PRIMITIVES)}")
    if report is not None:
        for rep in worst.values():
            report(rep)
    return worst
