"""Minimal define-by-run reverse-mode differentiation over float64 arrays.

Every op appends one node to the graph that is active on the current thread.
``backward`` walks that graph once, in reverse insertion order, and then
retires it; the next op starts a fresh graph.  Parameters are leaf tensors
built with ``requires_grad=True``: they belong to no graph and accumulate
gradients across backward passes until ``sgd_step`` (or ``zero_grad``)
clears them.  Other leaves are constants and never receive gradients.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_CLAMP = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible (a configuration error)."""


class NumericError(ArithmeticError):
    """A non-finite value reached an op that refuses it."""


class GraphError(RuntimeError):
    """Misuse of the single-use graph contract."""


class Tensor:
    __slots__ = ("values", "grad", "node_id", "graph", "_parents", "_backward", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.graph: Graph | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def is_leaf(self) -> bool:
        return self.graph is None

    def item(self) -> float:
        return float(self.values)

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def detach(self) -> Tensor:
        return Tensor(self.values)

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node_id})"

    # operator sugar, all routed through the recorded ops below
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self) -> Tensor:
        return transpose(self)


class Graph:
    """Ordered node record for one forward build and one backward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.used = False
        self.visits = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: Sequence[Tensor], backward_fn) -> Tensor:
        if self.used:
            raise GraphError("graph already consumed by backward")
        for p in parents:
            if p.graph is not None and p.graph is not self:
                raise GraphError("operand belongs to a different (retired) graph")
        out.graph = self
        out.node_id = len(self.nodes)
        out._parents = tuple(parents)
        out._backward = backward_fn
        self.nodes.append(out)
        return out


_local = threading.local()


def current_graph() -> Graph:
    g = getattr(_local, "graph", None)
    if g is None or g.used:
        g = Graph()
        _local.graph = g
    return g


def new_graph() -> Graph:
    """Start a fresh graph on this thread, abandoning any unfinished one."""
    _local.graph = Graph()
    return _local.graph


def _recording() -> bool:
    return not getattr(_local, "no_grad", False)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops eagerly without recording any graph nodes."""
    prev = getattr(_local, "no_grad", False)
    _local.no_grad = True
    try:
        yield
    finally:
        _local.no_grad = prev


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(values: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = np.zeros_like(values)
    out.requires_grad = False
    out.node_id = None
    out.graph = None
    out._parents = ()
    out._backward = None
    if _recording():
        current_graph().record(out, parents, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def _wants(t: Tensor) -> bool:
    """Graph nodes and parameters receive gradients; constant leaves do not."""
    return t.graph is not None or t.requires_grad


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``x @ W + b`` for x[B,D], W[D,H], b[H]."""
    if x.values.ndim != 2 or W.values.ndim != 2 or b.values.ndim != 1:
        raise ShapeError(f"affine expects 2-D x, 2-D W, 1-D b; got {x.shape}, {W.shape}, {b.shape}")
    if x.shape[1] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"affine shape mismatch: x{x.shape} W{W.shape} b{b.shape}")

    def backward(g):
        if _wants(x):
            x.grad += g @ W.values.T
        if _wants(W):
            W.grad += x.values.T @ g
        if _wants(b):
            b.grad += g.sum(axis=0)

    return _make(x.values @ W.values + b.values, (x, W, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if _wants(a):
            a.grad += g @ b.values.T
        if _wants(b):
            b.grad += a.values.T @ g

    return _make(a.values @ b.values, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def backward(g):
        if _wants(x):
            x.grad += g * mask

    return _make(np.where(mask, x.values, 0.0), (x,), backward)


def softmax_rows(z: Tensor) -> Tensor:
    if z.values.ndim != 2 or z.shape[1] < 2:
        raise ShapeError(f"softmax_rows expects [B, C>=2], got {z.shape}")
    if not np.all(np.isfinite(z.values)):
        raise NumericError("non-finite logits passed to softmax_rows")
    e = np.exp(z.values - z.values.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if _wants(z):
            z.grad += p * (g - (g * p).sum(axis=1, keepdims=True))

    return _make(p, (z,), backward)


def log(x: Tensor, clamp: float = LOG_CLAMP) -> Tensor:
    """Natural log with inputs clamped below at ``clamp``; no gradient through the clamp."""
    live = x.values > clamp
    safe = np.where(live, x.values, clamp)

    def backward(g):
        if _wants(x):
            x.grad += np.where(live, g / safe, 0.0)

    return _make(np.log(safe), (x,), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if _wants(a):
            a.grad += _unbroadcast(g, a.shape)
        if _wants(b):
            b.grad += _unbroadcast(g, b.shape)

    return _make(a.values + b.values, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if _wants(a):
            a.grad += _unbroadcast(g, a.shape)
        if _wants(b):
            b.grad -= _unbroadcast(g, b.shape)

    return _make(a.values - b.values, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if _wants(a):
            a.grad += _unbroadcast(g * b.values, a.shape)
        if _wants(b):
            b.grad += _unbroadcast(g * a.values, b.shape)

    return _make(a.values * b.values, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if _wants(a):
            a.grad += _unbroadcast(g / b.values, a.shape)
        if _wants(b):
            b.grad -= _unbroadcast(g * a.values / b.values**2, b.shape)

    return _make(a.values / b.values, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        if _wants(x):
            x.grad += c * g

    return _make(x.values * c, (x,), backward)


def combine(terms: Iterable[tuple[float, Tensor]]) -> Tensor:
    """Weighted sum of scalar (or same-shape) tensors: ``sum_k w_k * t_k``."""
    terms = [(float(w), t) for w, t in terms]
    if not terms:
        raise ValueError("combine needs at least one term")
    out = sum(w * t.values for w, t in terms)

    def backward(g):
        for w, t in terms:
            if _wants(t):
                t.grad += w * g

    return _make(np.asarray(out, dtype=np.float64), tuple(t for _, t in terms), backward)


def transpose(x: Tensor) -> Tensor:
    def backward(g):
        if _wants(x):
            x.grad += g.T

    return _make(x.values.T.copy(), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    def backward(g):
        if _wants(x):
            x.grad += g.reshape(x.shape)

    return _make(x.values.reshape(shape).copy(), (x,), backward)


def sum_rows(x: Tensor) -> Tensor:
    """Sum over axis 1: [B, C] -> [B]."""

    def backward(g):
        if _wants(x):
            x.grad += g[:, None]

    return _make(x.values.sum(axis=1), (x,), backward)


def sum_cols(x: Tensor) -> Tensor:
    """Sum over axis 0: [B, C] -> [C]."""

    def backward(g):
        if _wants(x):
            x.grad += g[None, :]

    return _make(x.values.sum(axis=0), (x,), backward)


def total(x: Tensor) -> Tensor:
    def backward(g):
        if _wants(x):
            x.grad += g

    return _make(np.asarray(x.values.sum()), (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.values.size

    def backward(g):
        if _wants(x):
            x.grad += g / n

    return _make(np.asarray(x.values.mean()), (x,), backward)


def take_rows(x: Tensor, index) -> Tensor:
    idx = np.asarray(index)

    def backward(g):
        if _wants(x):
            np.add.at(x.grad, idx, g)

    return _make(x.values[idx], (x,), backward)


# ---------------------------------------------------------------------------
# backward and optimizer
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from the scalar ``loss``."""
    if loss.values.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    g = loss.graph
    if g is None:
        raise GraphError("loss was not produced by a recorded graph")
    if g.used:
        raise GraphError("backward already called on this graph")
    g.used = True
    loss.grad = np.ones_like(loss.values)
    for node in reversed(g.nodes):
        g.visits += 1
        node._backward(node.grad)


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """In-place ``p -= lr * grad(p)``, then clear the gradients."""
    for p in params:
        p.values -= lr * p.grad
        p.grad.fill(0.0)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad.fill(0.0)
