"""Spectral-residual saliency, thresholding and salient-region crops.

Crops are produced by a constant linear operator (box selection followed by
bilinear resampling), so they can be re-applied to a tensor on the tape while
the mask itself stays fixed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import ndtensor as nt
from .errors import ContractError, FormatError, NoSalientRegion
from .ndtensor import Tensor
from .ndtensor import io as tio

log = logging.getLogger(__name__)

MIN_COMPONENT_FRACTION = 0.01
FALLBACK_QUANTILE = 0.9


@dataclass
class SaliencyMap:
    values: np.ndarray
    source: str = "spectral-residual"
    degenerate: bool = False


@dataclass(frozen=True)
class Box:
    top: int
    left: int
    bottom: int  # exclusive
    right: int  # exclusive

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def center(self) -> tuple[float, float]:
        return (self.top + self.bottom) / 2.0, (self.left + self.right) / 2.0

    def union(self, other: "Box") -> "Box":
        return Box(min(self.top, other.top), min(self.left, other.left),
                   max(self.bottom, other.bottom), max(self.right, other.right))

    def disjoint(self, other: "Box") -> bool:
        return (self.bottom <= other.top or other.bottom <= self.top
                or self.right <= other.left or other.right <= self.left)


@dataclass
class SaliencyParts:
    mask: np.ndarray
    boxes: list[Box]
    crops: list[np.ndarray]
    operators: list[np.ndarray] = field(repr=False, default_factory=list)
    target: tuple[int, int] = (16, 16)

    def apply(self, img: Tensor) -> list[Tensor]:
        """Re-cut the crops from ``img`` on the tape with the frozen geometry."""
        img = nt.as_tensor(img)
        flat = img.reshape(img.size)
        c = img.shape[0]
        return [nt.matmul(Tensor(op), flat).reshape((c, *self.target)) for op in self.operators]


def _luminance(img) -> np.ndarray:
    a = np.asarray(nt.as_tensor(img).data)
    if a.ndim == 3:
        return a.mean(axis=0)
    if a.ndim == 2:
        return a
    raise ContractError(f"expected (C, H, W) or (H, W) image, got shape {a.shape}")


def detect_spectral_residual(img) -> SaliencyMap:
    lum = _luminance(img)
    h, w = lum.shape
    if h < 8 or w < 8:
        raise ContractError(f"image {h}x{w} is smaller than 8x8")
    if np.ptp(lum) <= 1e-12 * max(1.0, float(np.abs(lum).max())):
        return SaliencyMap(np.zeros_like(lum), degenerate=True)
    spec = np.fft.fft2(lum)
    log_amp = np.log(np.abs(spec) + 1e-12)
    residual = log_amp - ndimage.uniform_filter(log_amp, size=3, mode="wrap")
    recon = np.fft.ifft2(np.exp(residual + 1j * np.angle(spec)))
    sal = ndimage.gaussian_filter(np.abs(recon) ** 2, sigma=w / 16.0, mode="wrap")
    return _normalized(sal, "spectral-residual")


def _normalized(values: np.ndarray, source: str) -> SaliencyMap:
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return SaliencyMap(np.zeros_like(values, dtype=float), source, degenerate=True)
    return SaliencyMap((values - lo) / (hi - lo), source)


def load_external_map(path, expected_shape) -> SaliencyMap:
    values = tio.load(path).astype(float)
    if values.ndim != 2:
        raise FormatError(f"saliency map must be rank 2, file has rank {values.ndim}")
    if tuple(values.shape) != tuple(expected_shape):
        raise FormatError(f"saliency map shape {values.shape} != expected {tuple(expected_shape)}")
    if not np.isfinite(values).all():
        raise FormatError("saliency map contains non-finite values")
    return _normalized(values, "external")


def threshold_mask(m: SaliencyMap, k: float = 1.0) -> np.ndarray:
    if m.degenerate or np.ptp(m.values) == 0:
        raise NoSalientRegion("saliency map is flat")
    v = m.values
    mask = v > v.mean() + k * v.std()
    if not mask.any():
        mask = v >= np.quantile(v, FALLBACK_QUANTILE)
    return mask


def _resize_matrix(src: int, dst: int) -> np.ndarray:
    """Half-pixel bilinear resampling, rows = output samples."""
    m = np.zeros((dst, src))
    if src == dst:
        return np.eye(src)
    for i in range(dst):
        pos = min(max((i + 0.5) * src / dst - 0.5, 0.0), src - 1.0)
        lo = int(np.floor(pos))
        hi = min(lo + 1, src - 1)
        frac = pos - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def crop_operator(shape: tuple, box: Box, target: tuple[int, int]) -> np.ndarray:
    """Matrix mapping a flattened (C, H, W) image to a flattened resized crop."""
    c, h, w = shape
    ry = np.zeros((target[0], h))
    rx = np.zeros((target[1], w))
    ry[:, box.top:box.bottom] = _resize_matrix(box.height, target[0])
    rx[:, box.left:box.right] = _resize_matrix(box.width, target[1])
    per_channel = np.kron(ry, rx)
    return np.kron(np.eye(c), per_channel)


def extract_parts(img, mask: np.ndarray, pad: int = 1, target: tuple[int, int] = (16, 16)) -> SaliencyParts:
    arr = np.asarray(nt.as_tensor(img).data)
    if arr.ndim == 2:
        arr = arr[None]
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("mask is empty; handle the no-salient-region case before cropping")
    c, h, w = arr.shape
    labels, n = ndimage.label(mask)  # default structure is 4-connected
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    slices = ndimage.find_objects(labels)
    min_area = MIN_COMPONENT_FRACTION * h * w

    def padded(sl) -> Box:
        return Box(max(sl[0].start - pad, 0), max(sl[1].start - pad, 0),
                   min(sl[0].stop + pad, h), min(sl[1].stop + pad, w))

    large = [i for i in range(n) if sizes[i] >= min_area]
    boxes = {i: padded(slices[i]) for i in large}
    keep = np.isin(labels, [i + 1 for i in large])
    for i in range(n):
        if i in boxes or not large:
            continue
        small = padded(slices[i])
        cy, cx = small.center
        nearest = min(large, key=lambda j: (boxes[j].center[0] - cy) ** 2 + (boxes[j].center[1] - cx) ** 2)
        boxes[nearest] = boxes[nearest].union(small)
        keep |= labels == i + 1
    ordered = [boxes[i] for i in large]
    ops = [crop_operator((c, h, w), b, target) for b in ordered]
    flat = arr.reshape(-1)
    crops = [(op @ flat).reshape(c, *target) for op in ops]
    return SaliencyParts(keep, ordered, crops, ops, tuple(target))


def saliency_parts(img, k: float = 1.0, pad: int = 1, target: tuple[int, int] = (16, 16),
                   external: SaliencyMap | None = None) -> SaliencyParts:
    """Detect, threshold and crop in one go; raises NoSalientRegion when nothing stands out."""
    m = external if external is not None else detect_spectral_residual(img)
    mask = threshold_mask(m, k)
    parts = extract_parts(img, mask, pad, target)
    if not parts.boxes:
        raise NoSalientRegion("every salient component is below the minimum area")
    return parts
