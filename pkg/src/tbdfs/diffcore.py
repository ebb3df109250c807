"""Dense float64 tensors with a define-by-run tape for reverse-mode gradients.

Operations only record onto a tape while one is active (``with Tape():``)
and at least one input requires a gradient; outside a tape everything runs
as plain numpy.
"""
from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of the operations executed while the tape is active."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, t: "Tensor"):
        t.node_id = len(self.nodes)
        self.nodes.append(t)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    __slots__ = ("value", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: int | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def numpy(self) -> np.ndarray:
        return self.value

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.record(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, kind: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- binary ops

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules (leading dims broadcast)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None
    av, bv = a.value, b.value

    def backward(g):
        # a 2-D operand shared across a batch: contract the batch axes in one BLAS call
        if b.ndim == 2 and a.ndim > 2:
            ax = list(range(a.ndim - 1))
            return g @ bv.T, np.tensordot(av, g, axes=(ax, ax))
        if a.ndim == 2 and b.ndim > 2:
            ax = list(range(b.ndim - 2)) + [b.ndim - 1]
            return np.tensordot(g, bv, axes=(ax, ax)), av.T @ g
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(av @ bv, (a, b), backward)


# ----------------------------------------------------------------- unary ops

def neg(x) -> Tensor:
    x = as_tensor(x)
    return _make(-x.value, (x,), lambda g: (-g,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _stable_sigmoid(x.value)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def _stable_sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) computed as -log(1 + exp(-x)) without overflow."""
    x = as_tensor(x)
    v = x.value
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    return _make(out, (x,), lambda g: (g * _stable_sigmoid(-v),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.value > 0
    # np.maximum keeps NaN visible to the divergence guard
    return _make(np.maximum(x.value, 0.0), (x,), lambda g: (g * pos,))


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.value <= 0):
        raise DomainError("log: input contains non-positive values")
    v = x.value
    return _make(np.log(v), (x,), lambda g: (g / v,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    e = np.exp(x.value)
    return _make(e, (x,), lambda g: (g * e,))


def cos(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    return _make(np.cos(v), (x,), lambda g: (-g * np.sin(v),))


def sin(x) -> Tensor:
    x = as_tensor(x)
    v = x.value
    return _make(np.sin(v), (x,), lambda g: (g * np.cos(v),))


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "relu": relu,
    "log": log,
    "neg": neg,
    "add": add,
    "mul": mul,
    "sub": sub,
}


def elementwise(kind: str, *inputs) -> Tensor:
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*inputs)


# -------------------------------------------------------- shape & reductions

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),))


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(x.value, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(reduce_sum(x, axis, keepdims), 1.0 / n)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat: no inputs")
    nd = ts[0].ndim
    ax = axis % nd if nd else 0
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(
                f"concat: shapes {[t.shape for t in ts]} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.value for t in ts], axis=ax), ts,
                 lambda g: tuple(np.split(g, cuts, axis=ax)))


def take(x, index, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate their gradients."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(np.moveaxis(out, axis, 0), index, np.moveaxis(g, axis, 0))
        return (out,)

    return _make(np.take(x.value, index, axis=axis), (x,), backward)


def repeat(x, repeats: int, axis: int) -> Tensor:
    """np.repeat with an integer count (each slice copied ``repeats`` times in place)."""
    x = as_tensor(x)
    if repeats == 1:
        return x
    ax = axis % x.ndim
    shape = x.shape

    def backward(g):
        g = g.reshape(shape[:ax] + (shape[ax], repeats) + shape[ax + 1:])
        return (g.sum(axis=ax + 1),)

    return _make(np.repeat(x.value, repeats, axis=ax), (x,), backward)


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    return _make(np.swapaxes(x.value, a1, a2), (x,), lambda g: (np.swapaxes(g, a1, a2),))


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max subtraction.

    ``mask`` (bool, broadcastable to x) excludes entries; a slice with no
    unmasked entries yields all zeros instead of NaN.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] == 0:
        raise DimensionError(f"softmax: empty axis {axis} for shape {x.shape}")
    v = x.value
    if mask is None:
        z = v - v.max(axis=axis, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=axis, keepdims=True)
    else:
        mask = np.broadcast_to(mask, v.shape)
        vm = np.where(mask, v, -np.inf)
        top = vm.max(axis=axis, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.where(mask, np.exp(np.where(mask, v - top, 0.0)), 0.0)
        tot = e.sum(axis=axis, keepdims=True)
        s = e / np.where(tot > 0, tot, 1.0)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), backward)


def dropout(x, p: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _make(x.value * keep, (x,), lambda g: (g * keep,))


# ------------------------------------------------------------------ backward

def backward(loss: Tensor, params: dict[str, Tensor] | Iterable[Tensor] | None = None) -> dict:
    """Reverse sweep from a scalar ``loss``.

    Returns ``{name: ndarray}`` for the given parameters (zeros for any not
    reachable from ``loss``). Without ``params`` every named leaf reached
    is returned.
    """
    if loss.value.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if isinstance(params, dict):
        targets = dict(params)
    elif params is not None:
        targets = {p.name: p for p in params}
    else:
        targets = None

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    leaves: dict[int, Tensor] = {}
    if loss._backward is not None:
        stack = [loss]
        order: list[Tensor] = []
        seen = {id(loss)}
        # collect reachable interior nodes, then sweep in reverse tape order
        while stack:
            t = stack.pop()
            order.append(t)
            for p in t._parents:
                if id(p) in seen or not p.requires_grad:
                    continue
                seen.add(id(p))
                if p._backward is None:
                    leaves[id(p)] = p
                else:
                    stack.append(p)
        order.sort(key=lambda t: t.node_id, reverse=True)
        for t in order:
            g = grads.pop(id(t), None)
            if g is None:
                continue
            for p, gp in zip(t._parents, t._backward(g)):
                if not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + gp
                else:
                    grads[id(p)] = gp
    elif loss.requires_grad:
        leaves[id(loss)] = loss

    if targets is None:
        return {t.name: grads.get(id(t), np.zeros_like(t.value))
                for t in leaves.values() if t.name is not None}
    return {name: np.asarray(grads.get(id(t), np.zeros_like(t.value)), dtype=np.float64).reshape(t.shape)
            for name, t in targets.items()}


def numeric_grad(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a-b| / max(|a|, |b|, tiny), a scale-aware relative error."""
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12) if a.size else 1.0
    return float(np.max(np.abs(a - b)) / denom) if a.size else 0.0


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))
