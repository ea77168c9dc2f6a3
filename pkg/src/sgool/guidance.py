"""Saliency-aware alignment losses and direct optimization of the initial latent."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndtensor as nt
from .embedder import JointEncoder, embed_condition, embed_image, embed_parts
from .errors import ContractError, NoSalientRegion, NumericError
from .ndtensor import Tensor
from .sampler import DEFAULT_MIX, generate, grad_wrt_latent
from .saliency import SaliencyMap, SaliencyParts, saliency_parts

log = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-4
TRACE_HEADER = ("step", "L", "L_s", "L_g", "latent_norm", "grad_norm", "degenerate_flag")


@dataclass
class GuidanceConfig:
    alpha: float = 0.5
    lam: float = 1.0
    opt_steps: int = 50
    step_size: float = 0.5
    momentum: float = 0.9
    renorm: bool = True
    normalize_grad: bool = True
    p: float = DEFAULT_MIX
    T: int = 50
    distance_form: str = "root"
    method: str = "sgool"
    mask_k: float = 1.0
    pad: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lam <= 0:
            raise ContractError(f"lambda must be positive, got {self.lam}")
        if self.opt_steps < 0:
            raise ContractError("opt_steps must be >= 0")
        if self.step_size <= 0:
            raise ContractError("step_size must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if self.distance_form not in ("root", "squared"):
            raise ContractError(f"unknown distance form {self.distance_form!r}")
        if self.method not in ("sgool", "global-only"):
            raise ContractError(f"unknown method {self.method!r}")


def _check_unit(v: Tensor, name: str) -> None:
    n = float(np.linalg.norm(v.data))
    if abs(n - 1.0) > UNIT_TOLERANCE:
        raise ContractError(f"{name} has norm {n:.6f}; embeddings must be unit length")


def spherical_distance(x, y, lam: float = 1.0, form: str = "root") -> Tensor:
    """``2*lam*sqrt(arcsin(|x-y|/2))``; ``form="squared"`` gives ``2*lam*arcsin(|x-y|/2)**2``."""
    x, y = nt.as_tensor(x), nt.as_tensor(y)
    _check_unit(x, "x")
    _check_unit(y, "y")
    half = nt.clip(nt.l2norm(x - y) * 0.5, 0.0, 1.0)
    angle = nt.arcsin(half)
    if form == "root":
        core = nt.sqrt(angle)
    elif form == "squared":
        core = angle * angle
    else:
        raise ContractError(f"unknown distance form {form!r}")
    return core * (2.0 * lam)


def saliency_loss(emb_c, emb_s, lam: float = 1.0, form: str = "root") -> Tensor:
    return spherical_distance(emb_c, emb_s, lam, form)


def global_loss(emb_c, emb_g, lam: float = 1.0, form: str = "root") -> Tensor:
    return spherical_distance(emb_c, emb_g, lam, form)


def combined_loss(l_s, l_g, alpha: float):
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    if isinstance(l_s, Tensor) or isinstance(l_g, Tensor):
        return alpha * nt.as_tensor(l_s) + (1.0 - alpha) * nt.as_tensor(l_g)
    return alpha * l_s + (1.0 - alpha) * l_g


@dataclass
class StepRecord:
    step: int
    L: float
    L_s: float
    L_g: float
    latent_norm: float
    grad_norm: float
    degenerate: bool


@dataclass
class OptimizationTrace:
    records: list[StepRecord] = field(default_factory=list)
    initial_image: np.ndarray | None = None
    final_image: np.ndarray | None = None
    grads: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def degenerate_steps(self) -> list[int]:
        return [r.step for r in self.records if r.degenerate]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for r in self.records:
                w.writerow([r.step, repr(r.L), repr(r.L_s), repr(r.L_g), repr(r.latent_norm),
                            repr(r.grad_norm), int(r.degenerate)])


class GuidanceLoss:
    """Loss on x_0 for one optimization step.

    The saliency geometry is taken from the numeric value of x_0 when the loss
    is first evaluated and then frozen; only the crop pixels carry gradient.
    """

    def __init__(self, enc: JointEncoder, c: int, cfg: GuidanceConfig,
                 parts: SaliencyParts | None = None, external: SaliencyMap | None = None):
        self.enc = enc
        self.cfg = cfg
        self.emb_c = embed_condition(enc, c)
        self.parts = parts
        self.external = external
        self.frozen = parts is not None
        self.degenerate = False
        self.values: dict[str, float] = {}

    def _parts_for(self, x0: Tensor) -> SaliencyParts | None:
        if self.frozen:
            return self.parts
        target = self.enc.image_shape[1:]
        try:
            self.parts = saliency_parts(x0.data, self.cfg.mask_k, self.cfg.pad, target, self.external)
        except NoSalientRegion as exc:
            log.warning("no salient region (%s); using the global loss only for this step", exc)
            self.parts = None
        return self.parts

    def __call__(self, x0: Tensor) -> Tensor:
        cfg = self.cfg
        l_g = global_loss(self.emb_c, embed_image(self.enc, x0), cfg.lam, cfg.distance_form)
        if cfg.method == "global-only":
            self.values = {"L": l_g.item(), "L_s": float("nan"), "L_g": l_g.item()}
            return l_g
        parts = self._parts_for(x0)
        if parts is None:
            self.degenerate = True
            self.values = {"L": l_g.item(), "L_s": float("nan"), "L_g": l_g.item()}
            return l_g
        l_s = saliency_loss(self.emb_c, embed_parts(self.enc, parts, x0), cfg.lam, cfg.distance_form)
        total = combined_loss(l_s, l_g, cfg.alpha)
        self.values = {"L": total.item(), "L_s": l_s.item(), "L_g": l_g.item()}
        return total


def optimize_latent(x_T, c: int, denoiser, enc: JointEncoder, s, cfg: GuidanceConfig | None = None,
                    external: SaliencyMap | None = None, keep_grads: bool = False):
    """Momentum descent on x_T against the combined loss; returns (x_T*, trace)."""
    cfg = cfg or GuidanceConfig()
    x = np.array(nt.as_tensor(x_T).data, dtype=float)
    target_norm = math.sqrt(x.size)
    v = np.zeros_like(x)
    trace = OptimizationTrace()
    for step in range(cfg.opt_steps + 1):
        loss = GuidanceLoss(enc, c, cfg, external=external)
        g, _ = grad_wrt_latent(x, c, loss, denoiser, s, cfg.p)
        gnorm = float(np.linalg.norm(g))
        vals = loss.values
        if not (np.isfinite(vals["L"]) and np.isfinite(gnorm)):
            raise NumericError(f"non-finite loss or gradient at step {step}")
        trace.records.append(StepRecord(step, vals["L"], vals["L_s"], vals["L_g"],
                                        float(np.linalg.norm(x)), gnorm, loss.degenerate))
        if keep_grads:
            trace.grads.append(g)
        if step == 0:
            trace.initial_image = generate(x, c, denoiser, s, cfg.p)[0].data
        if step == cfg.opt_steps:
            break
        direction = g / gnorm if (cfg.normalize_grad and gnorm > 0) else g
        v = cfg.momentum * v + direction
        x = x - cfg.step_size * v
        if cfg.renorm:
            x = x * (target_norm / np.linalg.norm(x))
    trace.final_image = generate(x, c, denoiser, s, cfg.p)[0].data
    return x, trace


def config_dict(cfg: GuidanceConfig) -> dict:
    return asdict(cfg)
