"""Exactly invertible coupled DDIM sampling and constant-memory latent gradients.

Two latents ``x`` and ``y`` start equal.  Each step updates one of them with a
DDIM move whose noise estimate comes from the other, then mixes them with
weight ``p``.  Every sub-step is affine in the latent it changes, so the whole
step can be undone in closed form, and the backward sweep rebuilds each state
from its successor instead of storing the trajectory.
"""

from __future__ import annotations

import weakref
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import ndtensor as nt
from .diffusion import NoiseSchedule
from .errors import ContractError, IntegrityError, NumericError
from .ndtensor import Tensor

DEFAULT_MIX = 0.93
DRIFT_LIMIT = 1e-4

_trackers: list["StateTracker"] = []


class StateTracker:
    """Counts CoupledState objects alive at once while the context is active."""

    def __init__(self):
        self._live: weakref.WeakSet = weakref.WeakSet()
        self.peak = 0
        self.created = 0

    def _register(self, state) -> None:
        self._live.add(state)
        self.created += 1
        self.peak = max(self.peak, len(self._live))

    @property
    def live(self) -> int:
        return len(self._live)


@contextmanager
def track_states():
    tracker = StateTracker()
    _trackers.append(tracker)
    try:
        yield tracker
    finally:
        _trackers.remove(tracker)


@dataclass(eq=False)
class CoupledState:
    x: np.ndarray
    y: np.ndarray
    t: int
    p: float

    def __post_init__(self):
        if self.x.shape != self.y.shape:
            raise ContractError(f"coupled latents differ in shape: {self.x.shape} vs {self.y.shape}")
        for tracker in _trackers:
            tracker._register(self)


@dataclass(eq=False)
class Trajectory:
    initial: CoupledState
    final: CoupledState
    steps: int


def init_coupled(x_T, p: float = DEFAULT_MIX, T: int | None = None) -> CoupledState:
    if not 0.0 < p <= 1.0:
        raise ContractError(f"mixing coefficient must lie in (0, 1], got {p}")
    x = np.array(nt.as_tensor(x_T).data)
    t = (T - 1) if T is not None else -1
    return CoupledState(x, x.copy(), t, float(p))


def _step_tensors(x, y, t: int, d, c: int, s: NoiseSchedule, p: float):
    """One coupled denoising step on tensors (differentiable when inputs are)."""
    a, b = s.coeffs(t)
    x1 = a * x + b * d(y, t, c)
    y1 = a * y + b * d(x1, t, c)
    x2 = p * x1 + (1.0 - p) * y1
    y2 = p * y1 + (1.0 - p) * x2
    return x2, y2


def coupled_denoise_step(st: CoupledState, d, c: int, s: NoiseSchedule) -> CoupledState:
    if st.t < 1:
        raise ContractError(f"cannot denoise past index 0 (state at t={st.t})")
    x2, y2 = _step_tensors(Tensor(st.x), Tensor(st.y), st.t, d, c, s, st.p)
    return CoupledState(x2.data, y2.data, st.t - 1, st.p)


def coupled_invert_step(st: CoupledState, d, c: int, s: NoiseSchedule) -> CoupledState:
    """Exact inverse of coupled_denoise_step: state at t-1 back to t."""
    t = st.t + 1
    if t > s.T - 1:
        raise ContractError(f"cannot re-noise past index {s.T - 1} (state at t={st.t})")
    p = st.p
    if p == 0.0:
        raise ContractError("mixing coefficient 0 is not invertible")
    a, b = s.coeffs(t)
    y1 = (st.y - (1.0 - p) * st.x) / p
    x1 = (st.x - (1.0 - p) * y1) / p
    y = (y1 - b * d(Tensor(x1), t, c).data) / a
    x = (x1 - b * d(Tensor(y), t, c).data) / a
    return CoupledState(x, y, t, p)


def _forward(x_T, c, d, s: NoiseSchedule, p: float) -> CoupledState:
    st = init_coupled(x_T, p, s.T)
    while st.t > 0:
        st = coupled_denoise_step(st, d, c, s)
    return st


def generate(x_T, c: int, d, s: NoiseSchedule, p: float = DEFAULT_MIX) -> tuple[Tensor, Trajectory]:
    """Run the coupled chain from index T-1 to 0; the x branch is the image."""
    initial = init_coupled(x_T, p, s.T)
    final = _forward(x_T, c, d, s, p)
    return Tensor(final.x.copy()), Trajectory(initial, final, s.T - 1)


def invert(final: CoupledState, c: int, d, s: NoiseSchedule) -> CoupledState:
    st = final
    while st.t < s.T - 1:
        st = coupled_invert_step(st, d, c, s)
    return st


def roundtrip_error(x_T, c: int, d, s: NoiseSchedule, p: float = DEFAULT_MIX) -> float:
    """max |recovered - x_T| / (1 + |x_T|) over both branches."""
    x_T = np.asarray(nt.as_tensor(x_T).data)
    _, traj = generate(x_T, c, d, s, p)
    back = invert(traj.final, c, d, s)
    scale = 1.0 + np.abs(x_T)
    return float(max((np.abs(back.x - x_T) / scale).max(), (np.abs(back.y - x_T) / scale).max()))


def grad_wrt_latent(x_T, c: int, loss, d, s: NoiseSchedule, p: float = DEFAULT_MIX) -> tuple[np.ndarray, float]:
    """Gradient of ``loss(x_0)`` with respect to x_T, plus the loss value.

    Only the final coupled state is kept after the forward pass.  Walking back,
    each earlier state is rebuilt with coupled_invert_step, the step is replayed
    on a fresh tape and its vector-Jacobian product is chained.
    """
    x_T = np.array(nt.as_tensor(x_T).data)
    st = _forward(x_T, c, d, s, p)

    x0 = Tensor(st.x.copy(), requires_grad=True)
    value = loss(x0)
    if not np.isfinite(value.data).all():
        raise NumericError(f"loss is not finite: {value.data}")
    if value.requires_grad:
        nt.backward(value)
    gx = x0.grad if x0.grad is not None else np.zeros_like(st.x)
    gy = np.zeros_like(st.y)

    while st.t < s.T - 1:
        prev = coupled_invert_step(st, d, c, s)
        st = None  # drop the successor before replaying
        xt = Tensor(prev.x, requires_grad=True)
        yt = Tensor(prev.y, requires_grad=True)
        x2, y2 = _step_tensors(xt, yt, prev.t, d, c, s, p)
        nt.backward(nt.sum_(x2 * Tensor(gx)) + nt.sum_(y2 * Tensor(gy)))
        gx, gy = xt.grad, yt.grad
        st = prev

    scale = 1.0 + np.abs(x_T)
    drift = float(max((np.abs(st.x - x_T) / scale).max(), (np.abs(st.y - x_T) / scale).max()))
    if drift > DRIFT_LIMIT:
        raise IntegrityError(
            f"reconstructed x_T drifted by {drift:.3g} (limit {DRIFT_LIMIT}); "
            "run in double precision or raise the mixing coefficient"
        )
    g = gx + gy
    if not np.isfinite(g).all():
        raise NumericError("latent gradient is not finite")
    return g, value.item()
