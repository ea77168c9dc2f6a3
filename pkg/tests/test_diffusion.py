import math

import numpy as np
import pytest

from sgool.data import SyntheticDataset, make_dataset
from sgool.diffusion import (
    Denoiser,
    DenoiserConfig,
    NoiseSchedule,
    ZeroDenoiser,
    ddim_step,
    eps_mse,
    make_schedule,
    q_sample,
    sample,
    train_denoiser,
)
from sgool.errors import ContractError, DimensionError
from sgool.ndtensor import Tensor


class ConstantEps:
    def __init__(self, value):
        self.value = value

    def __call__(self, x, t, c):
        return Tensor(np.full(x.shape, self.value))


def _schedule(alpha_bar):
    ab = np.asarray(alpha_bar, dtype=float)
    beta = 1.0 - ab / np.concatenate([[1.0], ab[:-1]])
    return NoiseSchedule(len(ab), beta, ab)


@pytest.mark.parametrize("T", [2, 10, 50, 200, 1000])
def test_schedule_invariants(T):
    s = make_schedule(T)
    assert len(s.alpha_bar) == T
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.beta > 0) & (s.beta < 0.2))
    assert s.alpha_bar[0] >= 0.99


def test_schedule_endpoints():
    assert make_schedule(50).alpha_bar[49] < make_schedule(50).alpha_bar[0]
    s = make_schedule(1000)
    assert s.beta[0] == pytest.approx(1e-4) and s.beta[-1] == pytest.approx(0.02)


def test_schedule_matches_direct_product():
    s = make_schedule(1000)
    beta = np.linspace(1e-4, 0.02, 1000)
    direct = math.prod(1.0 - float(b) for b in beta)
    assert s.alpha_bar[999] == pytest.approx(direct, rel=1e-10)


def test_short_schedule_reaches_noise():
    assert make_schedule(50).alpha_bar[-1] < 0.01


def test_schedule_rejects_short_chain():
    with pytest.raises(ContractError):
        make_schedule(1)


def test_q_sample_no_noise(rng):
    s = make_schedule(50)
    x0 = rng.standard_normal(5)
    out = q_sample(x0, 20, np.zeros(5), s)
    np.testing.assert_allclose(out.data, math.sqrt(s.alpha_bar[20]) * x0, rtol=1e-15)


def test_q_sample_clean_limit(rng):
    x0 = rng.standard_normal(4)
    out = q_sample(x0, 0, rng.standard_normal(4), _schedule([1.0, 0.5]))
    np.testing.assert_array_equal(out.data, x0)


def test_q_sample_hand_value():
    out = q_sample(Tensor(1.0), 0, Tensor(0.5), _schedule([0.36, 0.1]))
    assert out.item() == pytest.approx(1.0, abs=1e-15)


def test_q_sample_shape_mismatch():
    with pytest.raises(DimensionError):
        q_sample(np.zeros(3), 0, np.zeros(4), make_schedule(10))


def test_ddim_step_zero_eps_rescale(rng):
    s = make_schedule(50)
    x = rng.standard_normal((1, 4, 4))
    out = ddim_step(x, 30, ZeroDenoiser((1, 4, 4)), 0, s)
    np.testing.assert_allclose(out.data, math.sqrt(s.alpha_bar[29] / s.alpha_bar[30]) * x, rtol=1e-14)


def test_ddim_step_identity_when_flat(rng):
    x = rng.standard_normal(3)
    out = ddim_step(x, 1, ZeroDenoiser((3,)), 0, _schedule([0.5, 0.5]))
    np.testing.assert_allclose(out.data, x, rtol=1e-15)


def test_ddim_step_hand_value():
    s = _schedule([0.64, 0.25])
    x0_hat = (1.0 - math.sqrt(0.75) * 0.5) / 0.5
    assert x0_hat == pytest.approx(1.1339746, abs=1e-7)
    out = ddim_step(Tensor(1.0), 1, ConstantEps(0.5), 0, s)
    assert out.item() == pytest.approx(1.2071797, abs=1e-7)


@pytest.mark.parametrize("t", [0, 50])
def test_ddim_step_range(t):
    with pytest.raises(ContractError):
        ddim_step(np.zeros(2), t, ZeroDenoiser((2,)), 0, make_schedule(50))


def test_two_step_schedule_is_single_transition(rng):
    s = make_schedule(2)
    x = rng.standard_normal(6)
    d = ConstantEps(0.3)
    np.testing.assert_array_equal(sample(x, 0, d, s).data, ddim_step(x, 1, d, 0, s).data)


@pytest.mark.parametrize("T", [2, 10, 50, 200])
def test_zero_denoiser_telescopes(T, rng):
    s = make_schedule(T)
    x = rng.standard_normal((1, 16, 16))
    out = sample(x, 0, ZeroDenoiser(x.shape), s)
    np.testing.assert_allclose(out.data, math.sqrt(s.alpha_bar[0] / s.alpha_bar[-1]) * x, rtol=1e-12, atol=0)


def test_zero_steps_is_initialization():
    data = make_dataset(32, seed=1, size=8)
    s = make_schedule(10)
    trained = train_denoiser(data, s, DenoiserConfig(steps=0, hidden=16, layers=1, seed=5)).denoiser
    init = Denoiser.init(data.image_shape, s, 16, 1, data.num_classes, 16, seed=5)
    for k, v in init.state().items():
        np.testing.assert_array_equal(trained.state()[k], v)


def test_single_sample_overfits():
    full = make_dataset(8, seed=2, size=8)
    one = SyntheticDataset(full.images[:1], full.labels[:1], seed=2)
    s = make_schedule(50)
    res = train_denoiser(one, s, DenoiserConfig(steps=1500, batch=64, lr=3e-3, hidden=64, layers=2, seed=2))
    start = float(np.mean(res.losses[:20]))
    end = float(np.mean(res.losses[-20:]))
    assert end <= 0.5 * start


def test_training_is_deterministic():
    data = make_dataset(64, seed=4, size=8)
    s = make_schedule(10)
    cfg = DenoiserConfig(steps=30, batch=16, hidden=16, layers=1, seed=4)
    a, b = train_denoiser(data, s, cfg), train_denoiser(data, s, cfg)
    assert a.losses == b.losses


def test_empty_dataset_rejected():
    empty = SyntheticDataset(np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=int), seed=0)
    with pytest.raises(ContractError):
        train_denoiser(empty, make_schedule(10), DenoiserConfig(steps=1))


def test_trained_denoiser_beats_predict_zero(stack):
    assert eps_mse(stack.denoiser, stack.heldout, stack.schedule) < 1.0


def test_sample_is_deterministic(stack, rng):
    x = rng.standard_normal(stack.data.image_shape)
    a = sample(x, 3, stack.denoiser, stack.schedule).data
    b = sample(x, 3, stack.denoiser, stack.schedule).data
    assert np.array_equal(a, b)
    assert np.isfinite(a).all()


def test_checkpoint_roundtrip(tmp_path, rng):
    s = make_schedule(10)
    d = Denoiser.init((1, 8, 8), s, hidden=16, layers=2, seed=9)
    d.save(tmp_path / "ckpt", s, {"seed": 9})
    back, manifest = Denoiser.load(tmp_path / "ckpt")
    assert manifest["schedule"] == {"T": 10, "kind": "linear"}
    assert manifest["layer_sizes"] == d.mlp.sizes
    x = rng.standard_normal((1, 8, 8))
    assert np.array_equal(d(x, 4, 2).data, back(x, 4, 2).data)


def test_condition_out_of_range():
    d = Denoiser.init((1, 8, 8), make_schedule(10), hidden=8, layers=1)
    with pytest.raises(ContractError):
        d(np.zeros((1, 8, 8)), 1, 8)
