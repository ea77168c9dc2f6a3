"""Dense tensors with a single-use reverse-mode tape.

Every result produced from an input that requires a gradient carries a
``TapeNode`` holding the inputs and a vector-Jacobian closure.  ``backward``
walks the nodes in reverse topological order and frees them afterwards, so a
graph can be differentiated exactly once.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, DimensionError, DomainError, UnsupportedError

DTYPE = np.float32 if os.environ.get("SGOOL_DTYPE", "float64") == "float32" else np.float64


@dataclass(eq=False)
class TapeNode:
    op: str
    inputs: tuple
    vjp: Callable[[np.ndarray], tuple]


# marks a node whose graph has already been differentiated
_CONSUMED = TapeNode("consumed", (), lambda g: ())


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: TapeNode | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    # operator sugar
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        return sum_(self)

    def mean(self):
        return mean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, op: str, inputs: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = TapeNode(op, tuple(inputs), vjp)
    return out


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    # only scalar-with-tensor broadcasting exists
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "add")
    return _result(a.data + b.data, "add", (a, b),
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "sub")
    return _result(a.data - b.data, "sub", (a, b),
                   lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "mul")
    ad, bd = a.data, b.data
    op = "scalar-mul" if a.ndim == 0 or b.ndim == 0 else "mul"
    return _result(ad * bd, op, (a, b),
                   lambda g: (_reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    ad, bd = a.data, b.data
    out = ad / bd
    return _result(out, "div", (a, b),
                   lambda g: (_reduce_to(g / bd, a.shape), _reduce_to(-g * out / bd, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 2:
            return np.outer(g, bd), ad.T @ g
        if bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        return g * bd, g * ad

    return _result(ad @ bd, "matmul", (a, b), vjp)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` for a single row ``x`` of shape (in,) or a batch (B, in)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"affine: x{x.shape} w{w.shape} b{b.shape} do not conform")
    xd, wd = x.data, w.data

    def vjp(g):
        gx = g @ wd.T
        if xd.ndim == 1:
            return gx, np.outer(xd, g), g
        return gx, xd.T @ g, g.sum(axis=0)

    return _result(xd @ wd + b.data, "affine", (x, w, b), vjp)


# ------------------------------------------------------------- elementwise

def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    y = x.data * s
    return _result(y, "silu", (x,), lambda g: (g * (s + y * (1.0 - s)),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _result(y, "exp", (x,), lambda g: (g * y,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of a negative value")
    y = np.sqrt(x.data)

    def vjp(g):
        safe = np.where(y > 0, y, 1.0)
        return (np.where(y > 0, g / (2.0 * safe), 0.0),)

    return _result(y, "sqrt", (x,), vjp)


def arcsin(x) -> Tensor:
    x = as_tensor(x)
    if np.any(np.abs(x.data) > 1.0):
        raise DomainError("arcsin argument outside [-1, 1]")
    xd = x.data

    def vjp(g):
        d = 1.0 - xd * xd
        return (np.where(d > 0, g / np.sqrt(np.where(d > 0, d, 1.0)), 0.0),)

    return _result(np.arcsin(xd), "arcsin", (x,), vjp)


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _result(np.clip(x.data, lo, hi), "clip", (x,), lambda g: (g * inside,))


# -------------------------------------------------------------- reductions

def sum_(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _result(np.asarray(x.data.sum()), "sum", (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape, n = x.shape, x.size
    return _result(np.asarray(x.data.mean()), "mean", (x,),
                   lambda g: (np.full(shape, g / n, dtype=DTYPE),))


def l2norm(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    n = np.sqrt(np.sum(xd * xd))

    def vjp(g):
        # zero subgradient at the origin
        if n == 0:
            return (np.zeros_like(xd),)
        return (g * xd / n,)

    return _result(np.asarray(n), "l2norm", (x,), vjp)


def l2_normalize(x) -> Tensor:
    """Scale each row (last axis) to unit Euclidean length."""
    x = as_tensor(x)
    xd = x.data
    n = np.sqrt(np.sum(xd * xd, axis=-1, keepdims=True))
    if np.any(n == 0):
        raise DomainError("l2_normalize of a zero vector")
    y = xd / n

    def vjp(g):
        return ((g - y * np.sum(y * g, axis=-1, keepdims=True)) / n,)

    return _result(y, "l2-normalize", (x,), vjp)


def log_softmax(x) -> Tensor:
    """Row-wise log-softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(y)
    return _result(y, "log-softmax", (x,),
                   lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


# ------------------------------------------------------------------ layout

def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(data, "concat", ts, lambda g: tuple(np.split(g, bounds, axis=axis)))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _result(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(old),))


def slice_(x, index) -> Tensor:
    x = as_tensor(x)
    try:
        data = x.data[index]
    except IndexError as exc:
        raise DimensionError(f"slice: {exc}") from None
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(data, dtype=DTYPE), "slice", (x,), vjp)


# ---------------------------------------------------------------- backward

def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        node = t._node
        if node is not None:
            for parent in node.inputs:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward root does not require a gradient")
    if root._node is _CONSUMED:
        raise UnsupportedError("this graph was already differentiated; tapes are single-use")

    order = _topological(root)
    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape, dtype=DTYPE)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        node = t._node
        if node is _CONSUMED:
            raise UnsupportedError("graph contains an already-differentiated segment")
        if node is None:
            if g is not None:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        if g is None:
            t._node = _CONSUMED
            continue
        for parent, pg in zip(node.inputs, node.vjp(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
        t._node = _CONSUMED
