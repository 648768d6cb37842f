"""Tensor values, graph recording and reverse-mode accumulation."""
from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when a primitive receives inputs that violate its shape rule."""


class NumericalInstabilityError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""


class GraphError(RuntimeError):
    """Raised for backward passes that cannot be performed."""


class Tensor:
    """A float32 array that may take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; the primitives live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    def __radd__(self, other):
        from . import ops
        return ops.add(_lift(other), self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(_lift(other), self)

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, _lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, _lift(other))


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


class Node:
    """One recorded primitive application."""

    __slots__ = ("index", "fn", "inputs", "output", "ctx")

    def __init__(self, index: int, fn, inputs: Sequence[Tensor], output: Tensor, ctx):
        self.index = index
        self.fn = fn
        self.inputs = tuple(inputs)
        self.output = output
        self.ctx = ctx


_state = threading.local()


def _graph_stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_graph() -> "Graph | None":
    stack = _graph_stack()
    return stack[-1] if stack else None


class Graph:
    """Ordered record of primitive applications.

    Recording only happens inside ``with Graph() as g:``. Outside any scope,
    primitives run without saving activations or creating grad state.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._open = False

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        self._open = True
        return self

    def __exit__(self, *exc) -> None:
        stack = _graph_stack()
        if stack and stack[-1] is self:
            stack.pop()
        self._open = False

    def record(self, fn, inputs: Sequence[Tensor], output: Tensor, ctx) -> None:
        node = Node(len(self.nodes), fn, inputs, output, ctx)
        output.node = node
        self.nodes.append(node)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and t.node is None:
                    seen.setdefault(id(t), t)
        return list(seen.values())

    def clear(self) -> None:
        for node in self.nodes:
            node.output.node = None
            node.ctx = None
        self.nodes.clear()


def backward(graph: Graph, loss: Tensor, params: Iterable[Tensor] | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf of ``graph``.

    Leaves passed in ``params`` that are not reachable from ``loss`` get a
    zero gradient rather than ``None``.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss.node
    if node is None or node.index >= len(graph.nodes) or graph.nodes[node.index] is not node:
        raise GraphError("loss was not produced inside this graph (detached loss)")

    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=np.float64)}
    for nd in reversed(graph.nodes[: node.index + 1]):
        gout = grads.pop(id(nd.output), None)
        if gout is None:
            continue
        gins = nd.fn.backward(nd.ctx, gout)
        for t, g in zip(nd.inputs, gins):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                raise ShapeError(
                    f"{nd.fn.name}: backward produced gradient of shape {g.shape} for input of shape {t.shape}"
                )
            if t.node is None:
                g32 = g.astype(DTYPE, copy=False)
                t.grad = g32.copy() if t.grad is None else t.grad + g32
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g

    for leaf in graph.leaves():
        if leaf.grad is None:
            leaf.grad = np.zeros(leaf.shape, dtype=DTYPE)
    if params is not None:
        for p in params:
            if p.requires_grad and p.grad is None:
                p.grad = np.zeros(p.shape, dtype=DTYPE)
