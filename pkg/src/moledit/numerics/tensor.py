"""Dense float64 tensors with a recorded tape and reverse-mode gradients.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure propagating the output gradient back to them.  ``backward`` walks
the recorded graph in reverse topological order.  Only 1-D and 2-D values
are used by the models in this package; broadcasting is limited to adding a
row vector to a matrix.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeMismatch(ValueError):
    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {' vs '.join(str(s) for s in shapes)}")


class NonScalarLoss(ValueError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the tape (inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out._backward = backward_fn
    return out


@dataclass(frozen=True)
class Node:
    op: str
    inputs: tuple[int, ...]
    output: int


class Graph:
    """Topologically ordered view of the tape that produced ``root``."""

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.tensors = order
        index = {id(t): i for i, t in enumerate(order)}
        self.nodes = [
            Node(t.op, tuple(index[id(p)] for p in t.parents), i)
            for i, t in enumerate(order)
            if t.parents
        ]

    def __len__(self) -> int:
        return len(self.tensors)


def backward(loss: Tensor) -> None:
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    graph = Graph(loss)
    loss._accumulate(np.ones_like(loss.data))
    for t in reversed(graph.tensors):
        if t._backward is not None and t.grad is not None:
            t._backward(t.grad)
    # interior buffers are not needed after the sweep
    for t in graph.tensors:
        if t.parents:
            t.grad = None


# ---------------------------------------------------------------------------
# forward ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim == 0 or b.data.ndim == 0 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def _bw(g):
        if a.requires_grad:
            if b.data.ndim == 1:
                a._accumulate(np.multiply.outer(g, b.data))
            else:
                a._accumulate(g @ b.data.T)
        if b.requires_grad:
            if a.data.ndim == 1:
                b._accumulate(np.multiply.outer(a.data, g))
            else:
                b._accumulate(a.data.T @ g)

    return _make(out, "matmul", (a, b), _bw)


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector added to every row of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    bias = a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]
    if a.shape != b.shape and not bias:
        raise ShapeMismatch("add", a.shape, b.shape)
    out = a.data + b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0) if bias else g)

    return _make(out, "add", (a, b), _bw)


def sub(a, b) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a, b) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch("mul", a.shape, b.shape)
    out = a.data * b.data

    def _bw(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(out, "mul", (a, b), _bw)


def scale(x, c) -> Tensor:
    """Multiply by a constant float or by a single-element tensor."""
    x = as_tensor(x)
    if isinstance(c, Tensor):
        if c.data.size != 1:
            raise ShapeMismatch("scale", x.shape, c.shape)
        cv = float(c.data.reshape(()))
        out = x.data * cv

        def _bw(g):
            if x.requires_grad:
                x._accumulate(g * cv)
            if c.requires_grad:
                c._accumulate(np.asarray(np.sum(g * x.data)).reshape(c.shape))

        return _make(out, "scale", (x, c), _bw)

    cv = float(c)

    def _bw_const(g):
        x._accumulate(g * cv)

    return _make(x.data * cv, "scale", (x,), _bw_const)


def row_scale(x, w) -> Tensor:
    """Multiply row ``i`` of matrix ``x`` by ``w[i]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.shape != (x.shape[0],):
        raise ShapeMismatch("row_scale", x.shape, w.shape)
    out = x.data * w.data[:, None]

    def _bw(g):
        if x.requires_grad:
            x._accumulate(g * w.data[:, None])
        if w.requires_grad:
            w._accumulate(np.sum(g * x.data, axis=1))

    return _make(out, "row_scale", (x, w), _bw)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def _bw(g):
        x._accumulate(g * mask)

    return _make(x.data * mask, "relu", (x,), _bw)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeMismatch("transpose", x.shape)

    def _bw(g):
        x._accumulate(g.T)

    return _make(x.data.T.copy(), "transpose", (x,), _bw)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def _bw(g):
        x._accumulate(s * (g - np.sum(g * s, axis=axis, keepdims=True)))

    return _make(s, "softmax", (x,), _bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each row of ``x`` then apply per-feature gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def _bw(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            dx = inv * (
                gx
                - gx.mean(axis=-1, keepdims=True)
                - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
            )
            x._accumulate(dx)

    return _make(out, "layer_norm", (x, gain, bias), _bw)


def embedding_lookup(table, ids: Sequence[int]) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= table.shape[0])):
        raise ShapeMismatch("embedding_lookup", table.shape, idx.shape)

    def _bw(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        table._accumulate(buf)

    return _make(table.data[idx], "embedding_lookup", (table,), _bw)


# row selection is the same gather as an embedding lookup
gather_rows = embedding_lookup


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis)
    n = x.data.size if axis is None else x.shape[axis]

    def _bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(gg, x.shape) / n)

    return _make(np.asarray(out), "mean", (x,), _bw)


def concat(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *(x.shape for x in xs)) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def _bw(g):
        for x, piece in zip(xs, np.split(g, bounds, axis=axis)):
            if x.requires_grad:
                x._accumulate(piece)

    return _make(out, "concat", xs, _bw)


def cross_entropy(logits, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row-wise softmax."""
    logits = as_tensor(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.shape != (logits.shape[0],):
        raise ShapeMismatch("cross_entropy", logits.shape, t.shape)
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    rows = np.arange(len(t))
    loss = -logp[rows, t].mean()

    def _bw(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        logits._accumulate(p * (float(g) / len(t)))

    return _make(np.asarray(loss), "cross_entropy", (logits,), _bw)


def total(x) -> Tensor:
    """Sum of all entries."""
    x = as_tensor(x)

    def _bw(g):
        x._accumulate(np.broadcast_to(g, x.shape).copy())

    return _make(np.asarray(x.data.sum()), "sum", (x,), _bw)
