"""Reverse-mode differentiation over float64 numpy arrays.

This is deliberately not a general autodiff system: it provides exactly
the operations the recurrent generator/discriminator stack needs, each
with a hand-written backward rule. Graphs are built eagerly and freed
after :func:`backward`.

All arrays are float64. Gradients accumulate into ``Variable.grad`` of
leaf variables with ``requires_grad=True``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import RangeError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure numpy forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Variable:
    """A float64 array plus an optional gradient slot and backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward: Callable[[np.ndarray], None] | None = None
        self._parents: tuple[Variable, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Variable(shape={self.data.shape}, requires_grad={self.requires_grad})"


def as_variable(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def constant(x) -> Variable:
    return Variable(x, requires_grad=False)


def _make(out_data, parents: Sequence[Variable], backward) -> Variable:
    """Wrap an op result, attaching the backward rule when the tape is live.

    Gradient tracking is decided at construction: parents that do not
    require gradients here are pruned from the graph, so toggling a
    parameter's flag after the forward pass cannot change what a later
    ``backward`` writes to.
    """
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Variable(out_data, requires_grad=track)
    if track:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def backward(root: Variable) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    ``root`` must be scalar-valued. Iterative topological order; graphs
    from long unrolled sequences are deeper than Python's recursion limit.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    topo: list[Variable] = []
    seen: set[int] = set()
    stack: list[tuple[Variable, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.accumulate(np.ones_like(root.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # Free interior grads/graph as we go; leaves keep theirs.
            node.grad = None
            node._backward = None
            node._parents = ()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Variable, b: Variable) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out_data = a.data + b.data
    track_a, track_b = a.requires_grad, b.requires_grad

    def back(g):
        if track_a:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if track_b:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), back)


def sub(a: Variable, b: Variable) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out_data = a.data - b.data
    track_a, track_b = a.requires_grad, b.requires_grad

    def back(g):
        if track_a:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if track_b:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), back)


def mul(a: Variable, b: Variable) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out_data = a.data * b.data
    track_a, track_b = a.requires_grad, b.requires_grad

    def back(g):
        if track_a:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if track_b:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), back)


def div(a: Variable, b: Variable) -> Variable:
    a, b = as_variable(a), as_variable(b)
    out_data = a.data / b.data
    track_a, track_b = a.requires_grad, b.requires_grad

    def back(g):
        if track_a:
            a.accumulate(_unbroadcast(g / b.data, a.data.shape))
        if track_b:
            b.accumulate(_unbroadcast(-g * out_data / b.data, b.data.shape))

    return _make(out_data, (a, b), back)


def neg(a: Variable) -> Variable:
    a = as_variable(a)

    def back(g):
        a.accumulate(-g)

    return _make(-a.data, (a,), back)


def scale(a: Variable, k: float) -> Variable:
    a = as_variable(a)

    def back(g):
        a.accumulate(g * k)

    return _make(a.data * k, (a,), back)


def matmul(a: Variable, b: Variable) -> Variable:
    a, b = as_variable(a), as_variable(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul mismatch {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data
    track_a, track_b = a.requires_grad, b.requires_grad

    def back(g):
        if track_a:
            a.accumulate(g @ b.data.T)
        if track_b:
            b.accumulate(a.data.T @ g)

    return _make(out_data, (a, b), back)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def sigmoid(a: Variable) -> Variable:
    a = as_variable(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def back(g):
        a.accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), back)


def tanh(a: Variable) -> Variable:
    a = as_variable(a)
    out_data = np.tanh(a.data)

    def back(g):
        a.accumulate(g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), back)


def relu(a: Variable) -> Variable:
    a = as_variable(a)
    out_data = np.maximum(a.data, 0.0)

    def back(g):
        a.accumulate(g * (a.data > 0.0))

    return _make(out_data, (a,), back)


def leaky_relu(a: Variable, slope: float = 0.2) -> Variable:
    a = as_variable(a)
    pos = a.data > 0.0
    out_data = np.where(pos, a.data, slope * a.data)

    def back(g):
        a.accumulate(g * np.where(pos, 1.0, slope))

    return _make(out_data, (a,), back)


def exp(a: Variable) -> Variable:
    a = as_variable(a)
    out_data = np.exp(a.data)

    def back(g):
        a.accumulate(g * out_data)

    return _make(out_data, (a,), back)


def log(a: Variable) -> Variable:
    a = as_variable(a)
    out_data = np.log(a.data)

    def back(g):
        a.accumulate(g / a.data)

    return _make(out_data, (a,), back)


def square(a: Variable) -> Variable:
    a = as_variable(a)

    def back(g):
        a.accumulate(g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), back)


# ---------------------------------------------------------------------------
# reductions and shape ops


def sum_(a: Variable, axis=None, keepdims: bool = False) -> Variable:
    a = as_variable(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a.accumulate(np.broadcast_to(gg, a.data.shape))

    return _make(out_data, (a,), back)


def mean(a: Variable, axis=None, keepdims: bool = False) -> Variable:
    a = as_variable(a)
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def back(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        a.accumulate(np.broadcast_to(gg, a.data.shape) / count)

    return _make(out_data, (a,), back)


def max_pool(a: Variable, axis: int) -> Variable:
    """Coordinate-wise maximum along ``axis``.

    Backward routes the gradient to the first maximal entry along the
    axis (deterministic tie-break).
    """
    a = as_variable(a)
    out_data = a.data.max(axis=axis)
    amax = np.expand_dims(a.data.argmax(axis=axis), axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, amax, np.expand_dims(g, axis), axis=axis)
        a.accumulate(full)

    return _make(out_data, (a,), back)


def reshape(a: Variable, shape) -> Variable:
    a = as_variable(a)

    def back(g):
        a.accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def concat(parts: Iterable[Variable], axis: int = -1) -> Variable:
    parts = [as_variable(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    tracked = [p.requires_grad for p in parts]

    def back(g):
        for p, trk, lo, hi in zip(parts, tracked, offsets[:-1], offsets[1:]):
            if trk:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p.accumulate(g[tuple(idx)])

    return _make(out_data, tuple(parts), back)


def narrow(a: Variable, axis: int, start: int, length: int) -> Variable:
    a = as_variable(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def back(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a.accumulate(full)

    return _make(a.data[idx], (a,), back)


def stack(parts: Sequence[Variable], axis: int) -> Variable:
    parts = [as_variable(p) for p in parts]
    out_data = np.stack([p.data for p in parts], axis=axis)
    tracked = [p.requires_grad for p in parts]

    def back(g):
        for i, p in enumerate(parts):
            if tracked[i]:
                p.accumulate(np.take(g, i, axis=axis))

    return _make(out_data, tuple(parts), back)


def broadcast_axis(a: Variable, axis: int, reps: int) -> Variable:
    """Insert an axis of length ``reps`` by repetition."""
    a = as_variable(a)
    out_data = np.repeat(np.expand_dims(a.data, axis), reps, axis=axis)

    def back(g):
        a.accumulate(g.sum(axis=axis))

    return _make(out_data, (a,), back)


def gather_persons(x: Variable, order: np.ndarray) -> Variable:
    """Reorder axis 1 by a per-sample permutation ``order`` of shape (B, N).

    Backward scatters gradients through the inverse permutation.
    """
    x = as_variable(x)
    b = np.arange(order.shape[0])[:, None]
    idx = (b, order) + (slice(None),) * (x.data.ndim - 2)
    out_data = x.data[idx]

    def back(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        x.accumulate(full)

    return _make(out_data, (x,), back)


def gather_rows(table: Variable, ids: np.ndarray) -> Variable:
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    table = as_variable(table)
    ids = np.asarray(ids)
    out_data = table.data[ids]

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.data.shape[-1]))
        table.accumulate(full)

    return _make(out_data, (table,), back)


def gather_windows(seq: Variable, starts: np.ndarray, length: int) -> Variable:
    """Extract overlapping windows along axis 1 of a (rows, T, d) array.

    Returns (rows, K, length, d). Windows may overlap; backward
    accumulates into shared positions.
    """
    seq = as_variable(seq)
    idx = np.asarray(starts)[:, None] + np.arange(length)[None, :]
    out_data = seq.data[:, idx, :]

    def back(g):
        full = np.zeros_like(seq.data)
        flat = idx.reshape(-1)
        np.add.at(full, (slice(None), flat), g.reshape(g.shape[0], -1, g.shape[-1]))
        seq.accumulate(full)

    return _make(out_data, (seq,), back)


# ---------------------------------------------------------------------------
# fused softmax


def softmax_temperature(logits: Variable, temperature: float) -> Variable:
    """Row-wise softmax of ``logits / temperature`` along the last axis.

    Rows sum to one and are strictly positive; the backward pass is the
    exact softmax Jacobian-vector product divided by the temperature.
    """
    if temperature <= 0.0:
        raise RangeError(f"temperature must be > 0, got {temperature}")
    logits = as_variable(logits)
    z = logits.data / temperature
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        logits.accumulate((g - dot) * p / temperature)

    return _make(p, (logits,), back)
