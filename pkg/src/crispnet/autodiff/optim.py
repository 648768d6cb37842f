"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import DTYPE, Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class MissingGradError(RuntimeError):
    pass


def _key(i: int, p: Tensor) -> str:
    return p.name if p.name is not None else f"#{i}"


def optimizer_step(params: list[Tensor], state: AdamState, hyper: AdamHyper = AdamHyper()) -> AdamState:
    """Apply one Adam update in place, zero the grads and advance the timestep."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradError(f"parameter {_key(i, p)!r} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for i, p in enumerate(params):
        k = _key(i, p)
        g = p.grad.astype(np.float64)
        m = state.m.get(k)
        v = state.v.get(k)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = hyper.beta1 * m + (1 - hyper.beta1) * g
        v = hyper.beta2 * v + (1 - hyper.beta2) * g * g
        state.m[k], state.v[k] = m, v
        update = hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        p.data = (p.data.astype(np.float64) - update).astype(DTYPE)
        p.grad = None
    return state
