"""Checkpoint directories: one SGTENSOR blob per array plus ``manifest.json``."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .ndtensor import io as tio


def save_checkpoint(directory, arrays: dict[str, np.ndarray], manifest: dict) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, arr in arrays.items():
        fname = f"{name}.sgt"
        tio.save(directory / fname, arr)
        files[name] = fname
    manifest = dict(manifest, tensors=files)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    arrays = {name: tio.load(directory / fname) for name, fname in manifest["tensors"].items()}
    return arrays, manifest
