import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgool import ndtensor as nt
from sgool.errors import ContractError, DimensionError, DomainError, FormatError, UnsupportedError
from sgool.ndtensor import Tensor, analytic_grad, apply_primitive, backward, grad_check, numerical_grad
from sgool.ndtensor import io as tio


def test_add_example():
    assert np.array_equal(apply_primitive("add", Tensor([1, 2]), Tensor([3, 4])).data, [4, 6])


def test_matmul_identity():
    v = Tensor([0.3, -1.7])
    assert np.array_equal(apply_primitive("matmul", Tensor(np.eye(2)), v).data, v.data)


def test_arcsin_quarter_pi():
    out = apply_primitive("arcsin", Tensor(0.7071067811865476))
    assert out.item() == pytest.approx(0.7853981633974484, abs=1e-15)


def test_shape_mismatch():
    with pytest.raises(DimensionError):
        nt.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))
    with pytest.raises(DimensionError):
        nt.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones(2)))


def test_domain_errors():
    with pytest.raises(DomainError):
        nt.arcsin(Tensor([1.5]))
    with pytest.raises(DomainError):
        nt.sqrt(Tensor([-0.1]))


def test_scalar_broadcast_only():
    x = Tensor([1.0, 2.0, 3.0])
    assert np.array_equal((x * 2.0).data, [2, 4, 6])
    with pytest.raises(DimensionError):
        nt.mul(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))


def test_backward_sum():
    x = Tensor([1.0, -2.0, 5.0], requires_grad=True)
    backward(nt.sum_(x))
    assert np.array_equal(x.grad, [1, 1, 1])


def test_backward_half_squared_norm():
    x = Tensor([3.0, 4.0], requires_grad=True)
    backward(0.5 * nt.sum_(x * x))
    assert np.array_equal(x.grad, [3.0, 4.0])


def test_backward_mean_tanh_matches_differences(rng):
    w = rng.standard_normal((4, 4))
    f = lambda x: nt.mean(nt.tanh(nt.matmul(Tensor(w), x)))
    assert grad_check(f, rng.standard_normal(4), h=1e-5) <= 1e-6


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        backward(x * 2.0)


def test_tape_is_single_use():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = nt.sum_(x * x)
    backward(y)
    with pytest.raises(UnsupportedError):
        backward(y)


def test_no_tape_without_grad():
    y = nt.tanh(Tensor([0.5]))
    assert y._node is None and not y.requires_grad


def test_grad_check_sum_is_near_exact(rng):
    # only rounding in the central difference remains
    assert grad_check(nt.sum_, rng.standard_normal(6)) <= 1e-9


def test_grad_check_half_squared_norm():
    f = lambda x: 0.5 * nt.sum_(x * x)
    assert grad_check(f, np.array([1.0, 2.0, 3.0]), h=1e-5) <= 1e-9


def _weighted(op, w):
    return lambda x: nt.sum_(op(x) * Tensor(w))


UNARY = {
    "tanh": (nt.tanh, lambda r: r.standard_normal(5)),
    "silu": (nt.silu, lambda r: r.standard_normal(5)),
    "exp": (nt.exp, lambda r: r.standard_normal(5)),
    "sqrt": (nt.sqrt, lambda r: r.uniform(0.5, 2.0, 5)),
    "arcsin": (nt.arcsin, lambda r: r.uniform(-0.9, 0.9, 5)),
    "clip": (lambda x: nt.clip(x, -0.5, 0.5), lambda r: np.array([-0.9, -0.2, 0.1, 0.3, 0.8])),
    "reshape": (lambda x: x.reshape(1, 5), lambda r: r.standard_normal(5)),
    "slice": (lambda x: x[1:4], lambda r: r.standard_normal(5)),
    "l2-normalize": (nt.l2_normalize, lambda r: r.standard_normal(5)),
    "log-softmax": (nt.log_softmax, lambda r: r.standard_normal(5)),
}

SCALAR = {
    "sum": nt.sum_,
    "mean": nt.mean,
    "l2norm": nt.l2norm,
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_vjp(name, rng):
    op, draw = UNARY[name]
    x = draw(rng)
    w = rng.standard_normal(op(Tensor(x)).shape)
    assert grad_check(_weighted(op, w), x, h=1e-6) <= 1e-6


@pytest.mark.parametrize("name", sorted(SCALAR))
def test_reduction_vjp(name, rng):
    assert grad_check(SCALAR[name], rng.standard_normal(7), h=1e-6) <= 1e-6


@pytest.mark.parametrize("name", ["add", "sub", "mul", "div"])
@pytest.mark.parametrize("side", [0, 1])
def test_binary_vjp(name, side, rng):
    op = getattr(nt, name)
    other = rng.uniform(0.5, 1.5, 4)
    w = rng.standard_normal(4)
    if side == 0:
        f = lambda x: nt.sum_(op(x, Tensor(other)) * Tensor(w))
    else:
        f = lambda x: nt.sum_(op(Tensor(other), x) * Tensor(w))
    assert grad_check(f, rng.uniform(0.5, 1.5, 4), h=1e-6) <= 1e-6


def test_scalar_with_tensor_vjp(rng):
    v = rng.standard_normal(4)
    w = rng.standard_normal(4)
    f = lambda s: nt.sum_(nt.mul(s, Tensor(v)) * Tensor(w))
    assert grad_check(f, np.array(0.7), h=1e-6) <= 1e-6


@pytest.mark.parametrize("shapes", [((3, 4), (4, 2)), ((3, 4), (4,)), ((4,), (4, 2)), ((4,), (4,))])
def test_matmul_vjp(shapes, rng):
    a0, b0 = rng.standard_normal(shapes[0]), rng.standard_normal(shapes[1])
    w = rng.standard_normal(np.shape(a0 @ b0))
    fa = lambda a: nt.sum_(nt.matmul(a, Tensor(b0)) * Tensor(w))
    fb = lambda b: nt.sum_(nt.matmul(Tensor(a0), b) * Tensor(w))
    assert grad_check(fa, a0, h=1e-6) <= 1e-6
    assert grad_check(fb, b0, h=1e-6) <= 1e-6


@pytest.mark.parametrize("batch", [None, 3])
def test_affine_vjp(batch, rng):
    x0 = rng.standard_normal((5,) if batch is None else (batch, 5))
    w0, b0 = rng.standard_normal((5, 2)), rng.standard_normal(2)
    wt = rng.standard_normal(np.shape(x0 @ w0))
    g = lambda x, w, b: nt.sum_(nt.affine(x, w, b) * Tensor(wt))
    assert grad_check(lambda x: g(x, Tensor(w0), Tensor(b0)), x0, h=1e-6) <= 1e-6
    assert grad_check(lambda w: g(Tensor(x0), w, Tensor(b0)), w0, h=1e-6) <= 1e-6
    assert grad_check(lambda b: g(Tensor(x0), Tensor(w0), b), b0, h=1e-6) <= 1e-6


def test_concat_vjp(rng):
    c = rng.standard_normal(3)
    w = rng.standard_normal(7)
    f = lambda x: nt.sum_(nt.concat([x, Tensor(c)]) * Tensor(w))
    assert grad_check(f, rng.standard_normal(4), h=1e-6) <= 1e-6


def test_accumulation_linearity(rng):
    x0 = rng.standard_normal(4)
    w = rng.standard_normal((4, 4))
    f = lambda x: nt.sum_(nt.tanh(nt.matmul(Tensor(w), x)))
    g = lambda x: nt.l2norm(x * x)
    a = Tensor(x0, requires_grad=True)
    backward(f(a) + g(a))
    b = Tensor(x0, requires_grad=True)
    backward(f(b))
    gb = b.grad.copy()
    b.grad = None
    backward(g(b))
    np.testing.assert_allclose(a.grad, gb + b.grad, rtol=1e-13, atol=1e-15)


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    backward(nt.sum_(y + y))
    assert x.grad[0] == pytest.approx(8.0)


def test_deterministic(rng):
    w = rng.standard_normal((6, 6))
    x0 = rng.standard_normal(6)

    def run():
        x = Tensor(x0, requires_grad=True)
        backward(nt.mean(nt.silu(nt.matmul(Tensor(w), x))))
        return x.grad

    assert np.array_equal(run(), run())


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(1, 6), elements=st.floats(-3, 3)))
def test_tanh_chain_matches_differences(x):
    f = lambda t: nt.sum_(nt.tanh(t) * nt.tanh(t))
    np.testing.assert_allclose(analytic_grad(f, x), numerical_grad(f, x, 1e-6), rtol=1e-5, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-1e3, 1e3)))
def test_sgtensor_roundtrip(a):
    back = tio.decode(tio.encode(a))
    assert back.shape == a.shape and np.array_equal(back, a)


def test_sgtensor_layout():
    blob = tio.encode(np.array([[1.0, 2.0, 3.0]]))
    assert blob[:8] == b"SGTENSOR"
    assert blob[8] == 1 and blob[9] == 2
    assert blob[10:18] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(blob) == 18 + 3 * 8
    f32 = tio.encode(np.zeros(2, dtype=np.float32))
    assert f32[8] == 2 and len(f32) == 14 + 8
    assert tio.decode(f32).dtype == np.float32


@pytest.mark.parametrize("blob", [b"NOTMAGIC\x01\x00" + bytes(8), b"SGTENSOR\x07\x00" + bytes(8),
                                  b"SGTENSOR\x01\x01" + (4).to_bytes(4, "little") + bytes(8)])
def test_sgtensor_rejects_bad_files(blob):
    with pytest.raises(FormatError):
        tio.decode(blob)


def test_sqrt_gradient_at_zero_is_finite():
    x = Tensor([0.0, 4.0], requires_grad=True)
    backward(nt.sum_(nt.sqrt(x)))
    assert np.isfinite(x.grad).all() and x.grad[1] == pytest.approx(0.25)


def test_closed_form_values():
    assert nt.sqrt(Tensor(math.pi / 4)).item() == pytest.approx(math.sqrt(math.pi / 4))
    assert nt.l2norm(Tensor([3.0, 4.0])).item() == 5.0
