"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError
from .tensor import DTYPE, Tensor, backward


def numerical_grad(f: Callable[[Tensor], Tensor], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=DTYPE)
    flat = x.reshape(-1).copy()
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(flat.reshape(x.shape))).data)
        flat[i] = orig - h
        fm = float(f(Tensor(flat.reshape(x.shape))).data)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def analytic_grad(f: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    leaf = Tensor(np.array(x, dtype=DTYPE), requires_grad=True)
    out = f(leaf)
    if not np.isfinite(out.data).all():
        raise NumericError("non-finite function value at x")
    if not out.requires_grad:
        return np.zeros(leaf.shape, dtype=DTYPE)
    backward(out)
    return leaf.grad if leaf.grad is not None else np.zeros(leaf.shape, dtype=DTYPE)


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / scale


def grad_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5) -> float:
    """Largest per-coordinate relative gap between tape and finite differences."""
    x = np.asarray(x, dtype=DTYPE)
    return float(relative_errors(analytic_grad(f, x), numerical_grad(f, x, h)).max())
