"""Procedural three-class texture images for desk-scale runs.

``blobs`` are scattered Gaussian spots, ``checker`` a smoothed checkerboard and
``stripes`` oriented sinusoidal bands. Each class has its own two-colour palette
with per-image jitter plus pixel noise.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

CLASSES = ("blobs", "checker", "stripes")

_PALETTES = {
    "blobs": ((0.90, 0.75, 0.85), (0.45, 0.20, 0.55)),
    "checker": ((0.95, 0.85, 0.90), (0.70, 0.30, 0.45)),
    "stripes": ((0.85, 0.80, 0.95), (0.35, 0.25, 0.65)),
}


def _pattern(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    y, x = np.mgrid[0:size, 0:size] / size
    if kind == "stripes":
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(3, 6)
        return 0.5 + 0.5 * np.sin(2 * np.pi * freq * (x * np.cos(theta) + y * np.sin(theta)) + rng.uniform(0, 2 * np.pi))
    if kind == "checker":
        freq = rng.uniform(2.5, 4.5)
        prod = np.sin(2 * np.pi * freq * x + rng.uniform(0, 2 * np.pi)) * np.sin(2 * np.pi * freq * y + rng.uniform(0, 2 * np.pi))
        return 0.5 + 0.5 * np.tanh(4 * prod)
    if kind == "blobs":
        v = np.zeros((size, size))
        for _ in range(rng.integers(6, 12)):
            cx, cy = rng.uniform(0, 1, size=2)
            r = rng.uniform(0.04, 0.10)
            v += np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * r * r))
        return np.clip(v, 0, 1)
    raise ValueError(f"unknown texture {kind!r}")


def texture_image(kind: str, size: int, rng: np.random.Generator, noise: float = 0.05) -> np.ndarray:
    """One (size, size, 3) uint8 image of texture ``kind``."""
    v = _pattern(kind, size, rng)[:, :, None]
    light, dark = (np.clip(np.array(c) + rng.uniform(-0.08, 0.08, 3), 0, 1) for c in _PALETTES[kind])
    img = light * (1 - v) + dark * v + rng.normal(0, noise, (size, size, 3))
    return (np.clip(img, 0, 1) * 255).round().astype(np.uint8)


def make_synthetic_dataset(root: str | os.PathLike, per_class: int = 100, size: int = 64, seed: int = 0) -> Path:
    """Write ``<root>/<class>/<class>_<i>.png`` with ``per_class`` images per class."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    for kind in CLASSES:
        folder = root / kind
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            Image.fromarray(texture_image(kind, size, rng)).save(folder / f"{kind}_{i:04d}.png")
    return root
