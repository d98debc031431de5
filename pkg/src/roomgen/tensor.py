"""Minimal dense tensors with reverse-mode gradients (float64, numpy backed).

Every differentiable op records its parents and a backward closure. Nodes carry a
monotonically increasing creation index, so ``backward`` can replay the tape in
reverse execution order, visiting each node exactly once.

Broadcasting is limited to a *trailing-shape* operand: in ``a + b`` one side may
have a shape equal to a suffix of the other's (a bias over leading batch dims, or
a 0-d scalar). Anything else needs an explicit reshape.
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._id = next(_ids)
        self.name = name

    # -- plumbing -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        if self.data.ndim != 0:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in nodes:
                continue
            nodes[t._id] = t
            stack.extend(p for p in t._parents if p.requires_grad)
        self.grad = np.ones((), dtype=DTYPE)
        for key in sorted(nodes, reverse=True):
            t = nodes[key]
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    # -- operator sugar -------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(small) == len(big) or big[len(big) - len(small):] != small:
        raise ShapeError(f"{op}: incompatible shapes {sa} and {sb}")


# -- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def matmul(a, b) -> Tensor:
    """(..., n, k) @ (..., k, m) with identical leading dims, or (..., n, k) @ (k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            b.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k = a.shape[-1]
                b._accum(a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1]))
            else:
                b._accum(np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, (a, b), bw)


# -- elementwise unary ----------------------------------------------------

def scale(a, c: float) -> Tensor:
    return mul(a, float(c))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accum(g * p * a.data ** (p - 1))

    return _make(a.data ** p, (a,), bw)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bw(g):
        a._accum(g * 0.5 / out)

    return _make(out, (a,), bw)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        a._accum(g * out)

    return _make(out, (a,), bw)


def log(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accum(g / a.data)

    return _make(np.log(a.data), (a,), bw)


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0

    def bw(g):
        a._accum(g * pos)

    return _make(np.where(pos, a.data, 0.0), (a,), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh approximation of GELU."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        a._accum(g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner))

    return _make(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))

    def bw(g):
        a._accum(g * out * (1.0 - out))

    return _make(out, (a,), bw)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bw(g):
        a._accum(g * (1.0 - out * out))

    return _make(out, (a,), bw)


def l2norm(a, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; the subgradient at the origin is taken as 0."""
    a = as_tensor(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        scale_ = np.where(out > 0, g / safe, 0.0)
        a._accum(a.data * np.expand_dims(scale_, axis))

    return _make(out, (a,), bw)


# -- reductions -----------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=axes, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return scale(tsum(a, axes, keepdims), 1.0 / n)


def tmax(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; the gradient goes to the first maximal element."""
    a = as_tensor(a)
    if axis is None:
        flat = int(np.argmax(a.data))
        out = a.data.reshape(-1)[flat]

        def bw(g):
            z = np.zeros(a.data.size)
            z[flat] = g
            a._accum(z.reshape(a.shape))

        return _make(np.asarray(out), (a,), bw)
    ax = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=ax), ax)
    out = np.take_along_axis(a.data, idx, axis=ax)

    def bw(g):
        z = np.zeros(a.shape)
        np.put_along_axis(z, idx, g if keepdims else np.expand_dims(g, ax), axis=ax)
        a._accum(z)

    return _make(out if keepdims else np.squeeze(out, ax), (a,), bw)


# -- shape ops ------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        a._accum(np.transpose(g, inv))

    return _make(np.transpose(a.data, axes), (a,), bw)


def swap_last(a) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        z = np.zeros(a.shape)
        np.add.at(z, idx, g)
        a._accum(z)

    return _make(a.data[idx], (a,), bw)


def concat(ts: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {[x.shape for x in ts]}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[ax] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw)


def stack(ts: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in ts]
    ax = axis % (ts[0].ndim + 1)
    return concat([reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts], axis=ax)


def embedding_lookup(table, indices) -> Tensor:
    table = as_tensor(table)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding index out of range [0, {table.shape[0]}): {idx.min()}..{idx.max()}")

    def bw(g):
        z = np.zeros(table.shape)
        np.add.at(z, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accum(z)

    return _make(table.data[idx], (table,), bw)


# -- normalizations -------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data - np.max(a.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    out = x - lse

    def bw(g):
        a._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (a,), bw)


def layer_norm(a, eps: float = 1e-5, axis: int = -1) -> Tensor:
    """Normalize to zero mean / unit variance along ``axis`` (no affine)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def bw(g):
        n = a.shape[axis]
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * out).sum(axis=axis, keepdims=True) / n
        a._accum(inv * (g - gm - out * gx))

    return _make(out, (a,), bw)


# -- losses used everywhere ----------------------------------------------

def cross_entropy(logits, targets, weights=None) -> Tensor:
    """Sum over rows of weight * -log softmax(logits)[target].

    ``logits`` is (N, C); ``targets`` int (N,); ``weights`` (N,) defaults to ones.
    Rows with zero weight contribute nothing (targets there may be any valid id).
    """
    logits = as_tensor(logits)
    tgt = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=DTYPE)
    lp = log_softmax(logits, axis=-1)
    picked = getitem(lp, (np.arange(n), tgt))
    return scale(tsum(mul(picked, w)), -1.0)


# -- optimizer ------------------------------------------------------------

def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: dict,
              lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> dict:
    """One in-place Adam update. ``state`` holds step count and first/second moments."""
    b1, b2 = betas
    if not state:
        state.update(step=0, m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])
    state["step"] += 1
    k = state["step"]
    c1, c2 = 1.0 - b1 ** k, 1.0 - b2 ** k
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            g = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


class Adam:
    def __init__(self, params: Iterable[Tensor], lr: float = 3e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.betas, self.eps = lr, tuple(betas), eps
        self.state: dict = {}

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state,
                  self.lr, self.betas, self.eps)


def clip_grad_norm(params: Iterable[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total > max_norm > 0:
        for g in grads:
            g *= max_norm / total
    return total
