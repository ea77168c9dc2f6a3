"""Toy joint image/condition embedding trained contrastively."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nt
from .checkpoint import load_checkpoint, save_checkpoint
from .data import SyntheticDataset
from .errors import ContractError, DimensionError, TrainingError
from .ndtensor import Tensor
from .nn import MLP, Adam, cosine_lr
from .rng import stream

log = logging.getLogger(__name__)


class JointEncoder:
    def __init__(self, image_mlp: MLP, table: np.ndarray, log_temperature: float, image_shape: tuple):
        self.image_mlp = image_mlp
        self.table = Tensor(table)
        self.log_temperature = Tensor(np.asarray(log_temperature))
        self.image_shape = tuple(image_shape)

    @classmethod
    def init(cls, image_shape, num_classes: int, dim: int = 32, hidden: int = 128,
             temperature: float = 0.07, seed: int = 0) -> "JointEncoder":
        rng = stream(seed, "init", 1)
        n = int(np.prod(image_shape))
        mlp = MLP.init([n, hidden, hidden, dim], rng, "tanh")
        table = rng.normal(0.0, 1.0, size=(num_classes, dim))
        return cls(mlp, table, math.log(temperature), image_shape)

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def num_classes(self) -> int:
        return self.table.shape[0]

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature.data))

    @property
    def params(self) -> list[Tensor]:
        return [*self.image_mlp.params, self.table, self.log_temperature]

    def trainable(self, flag: bool) -> None:
        for p in self.params:
            p.requires_grad = flag
            p.grad = None

    def image_features(self, batch: Tensor) -> Tensor:
        """(B, C*H*W) -> (B, D) unit rows."""
        return nt.l2_normalize(self.image_mlp(batch))

    def save(self, directory, extra: dict | None = None):
        arrays = dict(self.image_mlp.state(), table=self.table.data.copy(),
                      log_temperature=np.asarray(self.log_temperature.data))
        manifest = {
            "kind": "encoder",
            "dim": self.dim,
            "num_classes": self.num_classes,
            "temperature": self.temperature,
            "image_shape": list(self.image_shape),
            "layer_sizes": self.image_mlp.sizes,
        }
        manifest.update(extra or {})
        return save_checkpoint(directory, arrays, manifest)

    @classmethod
    def load(cls, directory) -> tuple["JointEncoder", dict]:
        arrays, manifest = load_checkpoint(directory)
        table = arrays.pop("table")
        log_t = float(arrays.pop("log_temperature"))
        mlp = MLP.from_state(arrays, "tanh")
        return cls(mlp, table, log_t, tuple(manifest["image_shape"])), manifest


def embed_image(enc: JointEncoder, img) -> Tensor:
    img = nt.as_tensor(img)
    if img.shape != enc.image_shape:
        raise DimensionError(f"image shape {img.shape}, encoder expects {enc.image_shape}")
    return nt.l2_normalize(enc.image_mlp(img.reshape(img.size)))


def embed_condition(enc: JointEncoder, c: int) -> Tensor:
    if not 0 <= int(c) < enc.num_classes:
        raise ContractError(f"condition {c} outside vocabulary [0, {enc.num_classes})")
    return Tensor(nt.l2_normalize(Tensor(enc.table.data[int(c)])).data)


def embed_parts(enc: JointEncoder, parts, img=None) -> Tensor:
    """Mean of the per-crop unit embeddings, renormalized.

    With ``img`` given the crops are re-cut from it on the tape (frozen boxes);
    otherwise the stored crops are embedded.
    """
    crops = parts.apply(img) if img is not None else [Tensor(c) for c in parts.crops]
    if not crops:
        raise ContractError("saliency parts hold no crops")
    total = embed_image(enc, crops[0])
    for crop in crops[1:]:
        total = total + embed_image(enc, crop)
    return nt.l2_normalize(total)


@dataclass
class EncoderConfig:
    steps: int = 1500
    batch: int = 128
    lr: float = 2e-3
    dim: int = 32
    hidden: int = 128
    temperature: float = 0.07
    seed: int = 0


@dataclass
class EncoderTraining:
    encoder: JointEncoder
    losses: list[float] = field(default_factory=list)
    retrieval: float = float("nan")


def contrastive_loss(enc: JointEncoder, images: np.ndarray, labels: np.ndarray) -> Tensor:
    """Symmetric cross-entropy between image rows and condition rows.

    Image -> class is softmax over the K condition rows; class -> image is
    softmax over the batch images with every same-class image a positive.
    """
    b = len(labels)
    img = enc.image_features(Tensor(images.reshape(b, -1)))
    cond = nt.l2_normalize(enc.table)
    scale = nt.exp(nt.mul(enc.log_temperature, -1.0))
    logits = nt.mul(nt.matmul(img, _transpose(cond)), scale)  # (B, K)
    onehot = np.eye(enc.num_classes)[labels]
    i2c = nt.mul(nt.sum_(nt.mul(nt.log_softmax(logits), Tensor(onehot))), -1.0 / b)
    present = onehot.sum(axis=0) > 0
    cols = _transpose(logits)  # (K, B)
    targets = onehot.T / np.maximum(onehot.sum(axis=0)[:, None], 1.0)
    weights = targets * present[:, None]
    c2i = nt.mul(nt.sum_(nt.mul(nt.log_softmax(cols), Tensor(weights))), -1.0 / max(int(present.sum()), 1))
    return nt.mul(nt.add(i2c, c2i), 0.5)


def _transpose(x: Tensor) -> Tensor:
    r, c = x.shape
    perm = np.arange(r * c).reshape(r, c).T.reshape(-1)
    return nt.slice_(x.reshape(r * c), perm).reshape((c, r))


def retrieval_accuracy(enc: JointEncoder, data: SyntheticDataset) -> float:
    if len(data) == 0:
        return float("nan")
    feats = enc.image_features(Tensor(data.images.reshape(len(data), -1))).data
    cond = enc.table.data / np.linalg.norm(enc.table.data, axis=1, keepdims=True)
    return float(np.mean(np.argmax(feats @ cond.T, axis=1) == data.labels))


def train_encoder(data: SyntheticDataset, config: EncoderConfig | None = None,
                  heldout: SyntheticDataset | None = None) -> EncoderTraining:
    cfg = config or EncoderConfig()
    k = data.num_classes
    if len(np.unique(data.labels)) < k:
        raise ContractError("training labels must cover every class")
    enc = JointEncoder.init(data.image_shape, k, cfg.dim, cfg.hidden, cfg.temperature, cfg.seed)
    rng = stream(cfg.seed, "noise", 1)
    result = EncoderTraining(enc)
    if cfg.steps > 0:
        enc.trainable(True)
        opt = Adam(enc.params, lr=cfg.lr)
        try:
            for step in range(cfg.steps):
                idx = rng.integers(0, len(data), size=cfg.batch)
                loss = contrastive_loss(enc, data.images[idx], data.labels[idx])
                if not np.isfinite(loss.data):
                    raise TrainingError(f"encoder loss became {loss.item()} at step {step} (lr={cfg.lr})")
                opt.zero_grad()
                nt.backward(loss)
                opt.step(cosine_lr(cfg.lr, step, cfg.steps))
                # keep the temperature in a sane band
                enc.log_temperature.data = np.clip(enc.log_temperature.data, math.log(0.01), math.log(1.0))
                result.losses.append(loss.item())
                if step % 500 == 0:
                    log.info("encoder step %d loss %.4f", step, loss.item())
        finally:
            enc.trainable(False)
    if heldout is not None:
        result.retrieval = retrieval_accuracy(enc, heldout)
    return result
