"""Portable anymap writers/readers for inspection output (P5 and P6, 8-bit)."""

from __future__ import annotations

import numpy as np


def to_uint8(img: np.ndarray, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    a = (np.clip(np.asarray(img, dtype=float), lo, hi) - lo) / (hi - lo)
    return np.round(a * 255.0).astype(np.uint8)


def write_ppm(path, img: np.ndarray) -> None:
    """(C, H, W) image in [-1, 1] as P6; one channel is replicated, two get a zero blue."""
    a = np.asarray(img, dtype=float)
    if a.ndim == 2:
        a = a[None]
    c, h, w = a.shape
    if c == 1:
        a = np.repeat(a, 3, axis=0)
    elif c == 2:
        a = np.concatenate([a, np.full((1, h, w), -1.0)], axis=0)
    elif c != 3:
        raise ValueError(f"cannot write {c} channels as a pixmap")
    pix = to_uint8(a).transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(pix.tobytes())


def write_pgm(path, values: np.ndarray) -> None:
    """2-D array in [0, 1] (or a boolean mask) as P5."""
    pix = to_uint8(np.asarray(values, dtype=float), 0.0, 1.0)
    h, w = pix.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(pix.tobytes())


def read_pnm(path) -> np.ndarray:
    """uint8 array (H, W) for P5 or (H, W, 3) for P6."""
    blob = open(path, "rb").read()
    fields, pos = [], 0
    while len(fields) < 4:
        while blob[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1
    magic, w, h = fields[0], int(fields[1]), int(fields[2])
    chans = {b"P5": 1, b"P6": 3}[magic]
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * chans, offset=pos)
    return data.reshape(h, w) if chans == 1 else data.reshape(h, w, 3)
