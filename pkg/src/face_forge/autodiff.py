"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array. While a ``Tape`` is active, every
primitive operation appends one node (output, parents, backward closure)
to the tape; ``backward`` replays the tape in reverse creation order,
which is a reverse topological order of the computation DAG, visiting
each node exactly once. Without an active tape, operations are plain
numpy evaluation.

Only the shapes and broadcasts the captioning pipeline needs are
supported; gradients of broadcast operands are reduced back to the
operand shape.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class UsageError(ValueError):
    """Raised when an operation is called with invalid arguments."""


class Tensor:
    """Dense multi-dimensional array of float64 with optional gradient."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive operations for one forward pass.

    Usable as a context manager; nodes are appended in execution order,
    so iterating in reverse is a valid reverse topological order.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]):
        self.nodes.append((out, backward_fn))

    def __enter__(self) -> "Tape":
        _push_tape(self)
        return self

    def __exit__(self, *exc):
        _pop_tape(self)
        return False


_TAPE_STACK: list[Tape] = []


def _push_tape(tape: Tape):
    _TAPE_STACK.append(tape)


def _pop_tape(tape: Tape):
    if not _TAPE_STACK or _TAPE_STACK[-1] is not tape:
        raise UsageError("tape stack corrupted: exiting a tape that is not active")
    _TAPE_STACK.pop()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make_out(value: np.ndarray, parents: Sequence[Tensor],
              backward_fn: Callable[[np.ndarray, Tensor], None]) -> Tensor:
    """Create an op output, recording it on the active tape when tracking."""
    tape = active_tape()
    tracked = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=tracked)
    if tracked:
        def node_backward(g: np.ndarray, _out=out):
            backward_fn(g, _out)
        tape.record(out, node_backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


_ACCUM: dict[int, tuple[Tensor, np.ndarray]] | None = None


def _add_grad(t: Tensor, g: np.ndarray):
    """Route a gradient contribution to the active backward pass, or
    directly into the tensor's buffer when none is running."""
    global _ACCUM
    if _ACCUM is None:
        t._accumulate(g)
        return
    entry = _ACCUM.get(id(t))
    _ACCUM[id(t)] = (t, g.copy()) if entry is None else (t, entry[1] + g)


def backward(loss: Tensor, tape: Tape):
    """Propagate dLoss/dTensor to every requires_grad tensor on the tape.

    Each call adds one full gradient into every tensor's buffer, so
    repeated calls without zeroing accumulate.
    """
    global _ACCUM
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if _ACCUM is not None:
        raise UsageError("backward is not reentrant")
    _ACCUM = {id(loss): (loss, np.ones_like(loss.data))}
    try:
        for out, node_backward in reversed(tape.nodes):
            entry = _ACCUM.get(id(out))
            if entry is not None and out.requires_grad:
                node_backward(entry[1])
        flushed = list(_ACCUM.values())
    finally:
        _ACCUM = None
    for tensor, grad in flushed:
        if tensor.requires_grad:
            tensor._accumulate(grad)


# ---------------------------------------------------------------------------
# primitive operations


def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _add_grad(b, _unbroadcast(g, b.data.shape))
    return _make_out(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _add_grad(b, _unbroadcast(-g, b.data.shape))
    return _make_out(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _add_grad(b, _unbroadcast(g * a.data, b.data.shape))
    return _make_out(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _add_grad(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
    return _make_out(a.data / b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, -g)
    return _make_out(-a.data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise UsageError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise UsageError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g @ b.data.T)
        if b.requires_grad:
            _add_grad(b, a.data.T @ g)
    return _make_out(a.data @ b.data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise UsageError(f"transpose needs a 2-D tensor, got {a.shape}")

    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g.T)
    return _make_out(a.data.T.copy(), (a,), bwd)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g.reshape(a.data.shape))
    return _make_out(a.data.reshape(shape).copy(), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    if not parts:
        raise UsageError("concat needs at least one tensor")

    sizes = [t.data.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, out):
        for t, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(int(lo), int(hi))
                _add_grad(t, g[tuple(idx)])
    return _make_out(np.concatenate([t.data for t in parts], axis=axis), parts, bwd)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    if not parts:
        raise UsageError("stack needs at least one tensor")

    def bwd(g, out):
        slabs = np.split(g, len(parts), axis=axis)
        for t, slab in zip(parts, slabs):
            if t.requires_grad:
                _add_grad(t, slab.reshape(t.data.shape))
    return _make_out(np.stack([t.data for t in parts], axis=axis), parts, bwd)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor; duplicate indices accumulate gradients."""
    idx = np.asarray(indices, dtype=np.int64)
    if a.data.ndim != 2:
        raise UsageError(f"take_rows needs a 2-D tensor, got {a.shape}")

    def bwd(g, out):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            _add_grad(a, buf)
    return _make_out(a.data[idx].copy(), (a,), bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _add_grad(a, np.broadcast_to(gg, a.data.shape).copy())
    return _make_out(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]

    def bwd(g, out):
        if a.requires_grad:
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _add_grad(a, np.broadcast_to(gg, a.data.shape) / count)
    return _make_out(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)


def exp(a: Tensor) -> Tensor:
    value = np.exp(a.data)

    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g * out.data)
    return _make_out(value, (a,), bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g / a.data)
    return _make_out(np.log(a.data), (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    value = np.tanh(a.data)

    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g * (1.0 - out.data * out.data))
    return _make_out(value, (a,), bwd)


def power(a: Tensor, p: float) -> Tensor:
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g * p * np.power(a.data, p - 1.0))
    return _make_out(np.power(a.data, p), (a,), bwd)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); subgradient 0 where the floor binds."""
    def bwd(g, out):
        if a.requires_grad:
            _add_grad(a, g * (a.data > floor))
    return _make_out(np.maximum(a.data, floor), (a,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``.

    Entries along the reduced axis are positive and sum to 1; the output
    is invariant to constant shifts of the input.
    """
    if not -x.data.ndim <= axis < x.data.ndim:
        raise UsageError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def bwd(g, out):
        if x.requires_grad:
            y = out.data
            dot = (g * y).sum(axis=axis, keepdims=True)
            _add_grad(x, y * (g - dot))
    return _make_out(value, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise UsageError(f"log_softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    value = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g, out):
        if x.requires_grad:
            soft = np.exp(out.data)
            _add_grad(x, g - soft * g.sum(axis=axis, keepdims=True))
    return _make_out(value, (x,), bwd)


def pick(logp: Tensor, indices) -> Tensor:
    """Select logp[t, indices[t]] for each row t of a 2-D tensor."""
    idx = np.asarray(indices, dtype=np.int64)
    if logp.data.ndim != 2:
        raise UsageError(f"pick needs a 2-D tensor, got {logp.shape}")
    rows = np.arange(logp.data.shape[0])

    def bwd(g, out):
        if logp.requires_grad:
            buf = np.zeros_like(logp.data)
            buf[rows, idx] = g
            _add_grad(logp, buf)
    return _make_out(logp.data[rows, idx].copy(), (logp,), bwd)


# ---------------------------------------------------------------------------
# composite operations


def layer_norm(x: Tensor, axis: int, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize slices along ``axis`` to mean 0 / variance 1, then scale and shift."""
    n = x.data.shape[axis]
    if n == 0:
        raise UsageError("layer_norm over a zero-length axis")
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise UsageError(
            f"layer_norm gain/bias must have shape ({n},), "
            f"got {gain.shape} and {bias.shape}")
    mu = tmean(x, axis=axis, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=axis, keepdims=True)
    inv = power(add(var, Tensor(eps)), -0.5)
    normed = mul(centered, inv)
    return add(mul(normed, gain), bias)


def cross_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """Scaled dot-product attention; each output row is a convex combination of v rows."""
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise UsageError("cross_attention needs 2-D q, k, v")
    if q.data.shape[1] != k.data.shape[1]:
        raise UsageError(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.data.shape[0] != v.data.shape[0]:
        raise UsageError(f"key/value row counts differ: {k.shape} vs {v.shape}")
    if k.data.shape[0] < 1:
        raise UsageError("cross_attention needs at least one key/value row")
    scale = 1.0 / math.sqrt(q.data.shape[1])
    scores = mul(matmul(q, transpose(k)), Tensor(scale))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v)


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two-layer feed-forward map with tanh nonlinearity."""
    return add(matmul(tanh(add(matmul(x, w1), b1)), w2), b2)


# ---------------------------------------------------------------------------
# gradient oracle


def finite_difference_grad(f: Callable[[np.ndarray], float], p: np.ndarray,
                           h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function of ``p``."""
    p = np.asarray(p, dtype=np.float64)
    grad = np.zeros_like(p)
    flat = grad.reshape(-1)
    base = p.copy().reshape(-1)
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + h
        f_plus = f(base.reshape(p.shape))
        base[i] = orig - h
        f_minus = f(base.reshape(p.shape))
        base[i] = orig
        flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-based relative disagreement, guarded for near-zero gradients."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
