"""Synthetic class-conditioned shape renders.

Class id ``k`` encodes ``shape = k // 2`` (disk, square, cross, bar) and
``position = k % 2`` (upper-left or lower-right quadrant).  Background is -1,
shapes are drawn at a jittered positive intensity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import stream

SHAPES = ("disk", "square", "cross", "bar")
POSITIONS = ("upper-left", "lower-right")
NUM_CLASSES = len(SHAPES) * len(POSITIONS)


def class_name(k: int) -> str:
    return f"{SHAPES[k // 2]}@{POSITIONS[k % 2]}"


def render(k: int, size: int = 16, channels: int = 1, rng: np.random.Generator | None = None) -> np.ndarray:
    """Render one (channels, size, size) image of class ``k`` in [-1, 1]."""
    if not 0 <= k < NUM_CLASSES:
        raise ValueError(f"class id {k} outside [0, {NUM_CLASSES})")
    rng = rng if rng is not None else np.random.default_rng(0)
    shape, pos = SHAPES[k // 2], k % 2
    q = size / 4.0
    cy, cx = (q, q) if pos == 0 else (3 * q, 3 * q)
    cy += rng.uniform(-0.5, 0.5) * size / 16
    cx += rng.uniform(-0.5, 0.5) * size / 16
    r = size / 16 * rng.uniform(2.2, 3.2)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    if shape == "disk":
        inside = dy**2 + dx**2 <= r**2
    elif shape == "square":
        inside = (np.abs(dy) <= r * 0.85) & (np.abs(dx) <= r * 0.85)
    elif shape == "cross":
        arm = max(r * 0.35, 0.5)
        inside = ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= r))
    else:
        inside = (np.abs(dy) <= max(r * 0.35, 0.5)) & (np.abs(dx) <= r * 1.2)
    img = np.full((channels, size, size), -1.0)
    for ch in range(channels):
        img[ch][inside] = rng.uniform(0.6, 1.0)
    return img


@dataclass
class SyntheticDataset:
    images: np.ndarray  # (n, C, H, W)
    labels: np.ndarray  # (n,) int
    seed: int
    num_classes: int = NUM_CLASSES

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])


def make_dataset(count: int, seed: int, size: int = 16, channels: int = 1,
                 classes: int = NUM_CLASSES, stream_name: str = "data") -> SyntheticDataset:
    """Balanced dataset: labels cycle through ``range(classes)``."""
    rng = stream(seed, stream_name)
    labels = np.arange(count) % classes
    images = np.empty((count, channels, size, size))
    for i, k in enumerate(labels):
        images[i] = render(int(k), size, channels, rng)
    return SyntheticDataset(images, labels.astype(np.int64), seed, classes)
