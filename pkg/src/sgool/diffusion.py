"""Toy class-conditional diffusion model and deterministic DDIM sampling.

Timesteps are indexed ``0 .. T-1``; a DDIM step at index ``t`` moves a latent
from noise level ``alpha_bar[t]`` to ``alpha_bar[t-1]``, so a full chain makes
``T - 1`` transitions and ends at index 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndtensor as nt
from .checkpoint import load_checkpoint, save_checkpoint
from .data import NUM_CLASSES, SyntheticDataset
from .errors import ContractError, DimensionError, TrainingError
from .ndtensor import DTYPE, Tensor
from .nn import MLP, Adam, cosine_lr
from .rng import stream

log = logging.getLogger(__name__)

BETA_START = 1e-4
BETA_END = 0.02
BETA_CAP = 0.19


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray

    def coeffs(self, t: int) -> tuple[float, float]:
        """(a, b) with ddim_update(x, eps) = a*x + b*eps for the step t -> t-1."""
        ab_t, ab_prev = self.alpha_bar[t], self.alpha_bar[t - 1]
        a = math.sqrt(ab_prev / ab_t)
        b = math.sqrt(1.0 - ab_prev) - math.sqrt(ab_prev) * math.sqrt(1.0 - ab_t) / math.sqrt(ab_t)
        return a, b


def make_schedule(T: int, kind: str = "linear") -> NoiseSchedule:
    """Linear beta schedule stretched so that T steps cover a 1000-step noise budget.

    The end value is ``0.02 * 1000 / T`` capped at 0.19, so short chains still
    reach near-pure noise while every beta stays inside (0, 0.2).
    """
    if T < 2:
        raise ContractError(f"schedule needs T >= 2, got {T}")
    if kind != "linear":
        raise ContractError(f"unknown schedule kind {kind!r}")
    end = min(BETA_END * 1000.0 / T, BETA_CAP)
    beta = np.linspace(BETA_START, end, T)
    return NoiseSchedule(T, beta, np.cumprod(1.0 - beta))


def q_sample(x0, t: int, eps, s: NoiseSchedule):
    x0, eps = nt.as_tensor(x0), nt.as_tensor(eps)
    if x0.shape != eps.shape:
        raise DimensionError(f"noise shape {eps.shape} differs from image shape {x0.shape}")
    if not 0 <= t < s.T:
        raise ContractError(f"timestep {t} outside [0, {s.T})")
    ab = s.alpha_bar[t]
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def time_features(t, dim: int = 16) -> np.ndarray:
    t = np.asarray(t, dtype=DTYPE)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = t[..., None] * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1)


class Denoiser:
    """Epsilon-predictor ``skip[t] * x + MLP(x, time features, one-hot class)``.

    ``skip[t] = sqrt(1 - alpha_bar[t])`` is the optimal linear predictor of the
    noise for zero-mean data, so the MLP only learns a residual.  Without it an
    MLP of this size cannot represent the near-identity map at high noise
    levels well enough for DDIM, which divides the error by sqrt(alpha_bar).
    """

    def __init__(self, mlp: MLP, latent_shape: tuple, skip: np.ndarray,
                 num_classes: int = NUM_CLASSES, time_dim: int = 16):
        self.mlp = mlp
        self.latent_shape = tuple(latent_shape)
        self.skip = np.asarray(skip, dtype=DTYPE)
        self.num_classes = num_classes
        self.time_dim = time_dim

    @classmethod
    def init(cls, latent_shape, schedule: NoiseSchedule, hidden: int = 256, layers: int = 3,
             num_classes: int = NUM_CLASSES, time_dim: int = 16, seed: int = 0) -> "Denoiser":
        n = int(np.prod(latent_shape))
        sizes = [n + time_dim + num_classes] + [hidden] * layers + [n]
        mlp = MLP.init(sizes, stream(seed, "init", 0), "silu")
        mlp.params[-2].data *= 0.1
        return cls(mlp, latent_shape, np.sqrt(1.0 - schedule.alpha_bar), num_classes, time_dim)

    @property
    def latent_size(self) -> int:
        return int(np.prod(self.latent_shape))

    def _context(self, t, c) -> np.ndarray:
        c = np.asarray(c)
        if np.any(c < 0) or np.any(c >= self.num_classes):
            raise ContractError(f"condition outside [0, {self.num_classes})")
        onehot = np.eye(self.num_classes)[c]
        return np.concatenate([time_features(t, self.time_dim), onehot], axis=-1)

    def __call__(self, x: Tensor, t: int, c: int) -> Tensor:
        x = nt.as_tensor(x)
        if x.shape != self.latent_shape:
            raise DimensionError(f"latent shape {x.shape}, denoiser expects {self.latent_shape}")
        flat = x.reshape(self.latent_size)
        inp = nt.concat([flat, Tensor(self._context(t, c))])
        return (self.mlp(inp) + float(self.skip[t]) * flat).reshape(self.latent_shape)

    def predict_batch(self, xb: np.ndarray, t: np.ndarray, c: np.ndarray) -> Tensor:
        xb = xb.reshape(len(xb), -1)
        inp = np.concatenate([xb, self._context(t, c)], axis=1)
        return self.mlp(Tensor(inp)) + Tensor(self.skip[t][:, None] * xb)

    def state(self) -> dict[str, np.ndarray]:
        return dict(self.mlp.state(), skip=self.skip.copy())

    def save(self, directory, schedule: NoiseSchedule | None = None, extra: dict | None = None):
        manifest = {
            "kind": "denoiser",
            "layer_sizes": self.mlp.sizes,
            "activation": self.mlp.activation,
            "latent_shape": list(self.latent_shape),
            "num_classes": self.num_classes,
            "time_dim": self.time_dim,
        }
        if schedule is not None:
            manifest["schedule"] = {"T": schedule.T, "kind": "linear"}
        manifest.update(extra or {})
        return save_checkpoint(directory, self.state(), manifest)

    @classmethod
    def load(cls, directory) -> tuple["Denoiser", dict]:
        arrays, manifest = load_checkpoint(directory)
        skip = arrays.pop("skip")
        mlp = MLP.from_state(arrays, manifest["activation"])
        d = cls(mlp, tuple(manifest["latent_shape"]), skip, manifest["num_classes"], manifest["time_dim"])
        return d, manifest


class ZeroDenoiser:
    """Predicts zero noise everywhere; reduces DDIM to a pure rescale."""

    def __init__(self, latent_shape, num_classes: int = NUM_CLASSES):
        self.latent_shape = tuple(latent_shape)
        self.num_classes = num_classes

    def __call__(self, x: Tensor, t: int, c: int) -> Tensor:
        return nt.mul(nt.as_tensor(x), 0.0)


@dataclass
class DenoiserConfig:
    steps: int = 4000
    batch: int = 128
    lr: float = 1e-3
    hidden: int = 256
    layers: int = 3
    time_dim: int = 16
    seed: int = 0


@dataclass
class DenoiserTraining:
    denoiser: Denoiser
    losses: list[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        tail = self.losses[-50:]
        return float(np.mean(tail)) if tail else float("nan")


def train_denoiser(data: SyntheticDataset, s: NoiseSchedule, config: DenoiserConfig | None = None) -> DenoiserTraining:
    """Fit the epsilon-prediction MSE over random (image, t, noise) draws."""
    cfg = config or DenoiserConfig()
    if len(data) == 0:
        raise ContractError("cannot train on an empty dataset")
    d = Denoiser.init(data.image_shape, s, cfg.hidden, cfg.layers, data.num_classes, cfg.time_dim, cfg.seed)
    rng = stream(cfg.seed, "noise", 0)
    result = DenoiserTraining(d)
    if cfg.steps == 0:
        return result
    d.mlp.trainable(True)
    opt = Adam(d.mlp.params, lr=cfg.lr)
    sab = np.sqrt(s.alpha_bar)
    snab = np.sqrt(1.0 - s.alpha_bar)
    n = d.latent_size
    try:
        for step in range(cfg.steps):
            idx = rng.integers(0, len(data), size=cfg.batch)
            t = rng.integers(0, s.T, size=cfg.batch)
            eps = rng.standard_normal((cfg.batch, n))
            x0 = data.images[idx].reshape(cfg.batch, n)
            xt = sab[t, None] * x0 + snab[t, None] * eps
            pred = d.predict_batch(xt, t, data.labels[idx])
            diff = pred - Tensor(eps)
            loss = nt.mean(diff * diff)
            if not np.isfinite(loss.data):
                raise TrainingError(f"denoiser loss became {loss.item()} at step {step} (lr={cfg.lr})")
            opt.zero_grad()
            nt.backward(loss)
            opt.step(cosine_lr(cfg.lr, step, cfg.steps))
            result.losses.append(loss.item())
            if step % 500 == 0:
                log.info("denoiser step %d loss %.4f", step, loss.item())
    finally:
        d.mlp.trainable(False)
    return result


def eps_mse(d, data: SyntheticDataset, s: NoiseSchedule, seed: int = 1, draws: int = 512) -> float:
    """Epsilon-prediction MSE on fresh noise draws (predict-zero scores 1.0)."""
    rng = stream(seed, "heldout", 0)
    n = int(np.prod(data.image_shape))
    idx = rng.integers(0, len(data), size=draws)
    t = rng.integers(0, s.T, size=draws)
    eps = rng.standard_normal((draws, n))
    x0 = data.images[idx].reshape(draws, n)
    xt = np.sqrt(s.alpha_bar)[t, None] * x0 + np.sqrt(1.0 - s.alpha_bar)[t, None] * eps
    pred = d.predict_batch(xt, t, data.labels[idx]).data
    return float(np.mean((pred - eps) ** 2))


def ddim_step(x_t, t: int, d, c: int, s: NoiseSchedule) -> Tensor:
    """Deterministic (eta = 0) DDIM transition from index t to t-1."""
    if not 1 <= t < s.T:
        raise ContractError(f"ddim_step needs 1 <= t < {s.T}, got {t}")
    x_t = nt.as_tensor(x_t)
    eps = d(x_t, t, c)
    ab_t, ab_prev = s.alpha_bar[t], s.alpha_bar[t - 1]
    x0_hat = (x_t - math.sqrt(1.0 - ab_t) * eps) * (1.0 / math.sqrt(ab_t))
    return math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * eps


def sample(x_T, c: int, d, s: NoiseSchedule) -> Tensor:
    """Fold ddim_step from index T-1 down to 0; no clipping inside the chain."""
    x = nt.as_tensor(x_T)
    for t in range(s.T - 1, 0, -1):
        x = ddim_step(x, t, d, c, s)
    return x


def config_dict(cfg) -> dict:
    return asdict(cfg)
