"""Minimal float32 tensor engine with reverse-mode gradients."""
from . import ops
from .gradcheck import GradReport, grad_check, run_suite
from .ops import PRIMITIVES, apply
from .optim import AdamHyper, AdamState, MissingGradError, optimizer_step
from .tensor import (
    Graph,
    GraphError,
    NumericalInstabilityError,
    ShapeError,
    Tensor,
    backward,
    parameter,
)

__all__ = [
    "ops", "apply", "PRIMITIVES", "Tensor", "Graph", "backward", "parameter",
    "grad_check", "run_suite", "GradReport", "optimizer_step", "AdamState",
    "AdamHyper", "MissingGradError", "ShapeError", "GraphError",
    "NumericalInstabilityError",
]
