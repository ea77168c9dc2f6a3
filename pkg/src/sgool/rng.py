"""Named random streams split from one 64-bit seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("data", "init", "noise", "latent", "heldout")


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name``; identical arguments give identical draws."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode()), *[int(e) for e in extra]]
    return np.random.default_rng(np.random.SeedSequence(key))
