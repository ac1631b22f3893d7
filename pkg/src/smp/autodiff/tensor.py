"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations are recorded on the innermost active :class:`Tape` only when one
of their inputs requires a gradient; outside a tape everything runs as plain
numpy.  ``backward`` replays the tape in reverse, writes ``.grad`` on every
leaf tensor with ``requires_grad`` and then clears the tape.
"""
from __future__ import annotations

import threading

import numpy as np

from ..errors import NonScalarLoss, ShapeMismatch, TapeConsumed

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "name", "_recorded")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._recorded = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scalar_mul(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scalar_mul(self, -1.0))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


class Tape:
    """Ordered record of differentiable operations; use as a context manager."""

    def __init__(self):
        self.records: list[tuple] = []
        self.consumed = False

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        _stack().remove(self)

    def __len__(self):
        return len(self.records)

    def record(self, out, inputs, backward_fn):
        self.records.append((out, inputs, backward_fn))
        self.consumed = False


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._recorded


def _emit(value, inputs, backward_fn) -> Tensor:
    out = Tensor(value)
    tapes = _stack()
    if tapes and any(_tracks(t) for t in inputs):
        out._recorded = True
        tapes[-1].record(out, inputs, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _emit(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x: Tensor, w: Tensor, b: Tensor, relu: bool = False) -> Tensor:
    """Fused ``x @ w + b`` (optionally followed by ReLU) for 2-D ``x``."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape[-1] != w.shape[1]:
        raise ShapeMismatch(f"affine {x.shape} @ {w.shape} + {b.shape}")
    xv, wv = x.value, w.value
    y = xv @ wv
    y += b.value
    if relu:
        mask = y > 0
        y *= mask
    else:
        mask = None
    bshape = b.shape

    def back(g):
        if mask is not None:
            g = g * mask
        return g @ wv.T, xv.T @ g, g.sum(axis=0).reshape(bshape)

    return _emit(y, (x, w, b), back)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}") from None
    sa, sb = a.shape, b.shape
    return _emit(value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ShapeMismatch(f"mul {a.shape} * {b.shape}") from None
    av, bv = a.value, b.value
    return _emit(value, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    return _emit(a.value * c, (a,), lambda g: (g * c,))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch(f"concat {[t.shape for t in tensors]}") from None
    ax = axis % value.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _emit(value, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=ax)))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.value > 0
    return _emit(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.value)
    return _emit(y, (a,), lambda g: (g * (1.0 - y * y),))


def slice_(a: Tensor, key) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _emit(a.value[key], (a,), back)


def gather_rows(a: Tensor, index) -> Tensor:
    """Rows ``a[index]`` for an integer index array (rows may repeat)."""
    a = _as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit(a.value[index], (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape {old} -> {shape}") from None
    return _emit(value, (a,), lambda g: (g.reshape(old),))


def sum_(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(a.value.sum(axis=axis), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return scalar_mul(sum_(a, axis), 1.0 / n)


def square(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    v = a.value
    return _emit(v * v, (a,), lambda g: (2.0 * v * g,))


def normalize_rows(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Each row divided by ``max(||row||_2, eps)``."""
    a = _as_tensor(a)
    v = a.value
    norm = np.sqrt(np.sum(v * v, axis=-1, keepdims=True))
    active = norm > eps
    denom = np.where(active, norm, eps)
    y = v / denom

    def back(g):
        # d(v/|v|) = (g - y (y.g)) / |v| on active rows, g / eps otherwise
        proj = np.sum(y * g, axis=-1, keepdims=True)
        return (np.where(active, (g - y * proj) / denom, g / eps),)

    return _emit(y, (a,), back)


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` (accumulating) on every leaf that requires it."""
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    if tape.consumed:
        raise TapeConsumed("tape already consumed; run the forward pass again")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and not loss._recorded:
        leaves[id(loss)] = loss
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if not _tracks(inp):
                continue
            key = id(inp)
            grads[key] = gi if key not in grads else grads[key] + gi
            if not inp._recorded:
                leaves[key] = inp
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g
    tape.records.clear()
    tape.consumed = True
