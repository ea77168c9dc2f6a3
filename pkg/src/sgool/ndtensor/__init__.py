"""Minimal dense tensors with reverse-mode differentiation."""

from .gradcheck import analytic_grad, grad_check, numerical_grad, relative_errors
from .io import load, save
from .tensor import (
    DTYPE,
    TapeNode,
    Tensor,
    add,
    affine,
    arcsin,
    as_tensor,
    backward,
    clip,
    concat,
    div,
    exp,
    l2_normalize,
    l2norm,
    log_softmax,
    matmul,
    mean,
    mul,
    reshape,
    silu,
    slice_,
    sqrt,
    sub,
    sum_,
    tanh,
)

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scalar-mul": mul,
    "div": div,
    "matmul": matmul,
    "affine": affine,
    "tanh": tanh,
    "silu": silu,
    "exp": exp,
    "sum": sum_,
    "mean": mean,
    "l2norm": l2norm,
    "l2-normalize": l2_normalize,
    "log-softmax": log_softmax,
    "concat": lambda *ts, axis=0: concat(ts, axis=axis),
    "reshape": reshape,
    "slice": slice_,
    "sqrt": sqrt,
    "arcsin": arcsin,
    "clip": clip,
}


def apply_primitive(kind: str, *inputs, **kwargs) -> Tensor:
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ValueError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **kwargs)
