"""Procedural clean backgrounds standing in for real photographs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from allweather.errors import InputError

SCENE_KINDS = ("gradient", "blobs", "checker")


@dataclass
class CleanScene:
    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    seed: int
    kind: str


def _gradient(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-12)
    low, high = rng.uniform(0.0, 0.4, size=3), rng.uniform(0.6, 1.0, size=3)
    return low[:, None, None] + (high - low)[:, None, None] * ramp[None]


def _blobs(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    noise = rng.random((3, h, w))
    sigma = max(h, w) / rng.uniform(6, 12)
    smooth = np.stack([ndimage.gaussian_filter(c, sigma, mode="wrap") for c in noise])
    lo = smooth.min(axis=(1, 2), keepdims=True)
    span = np.maximum(np.ptp(smooth, axis=(1, 2), keepdims=True), 1e-12)
    return 0.1 + 0.8 * (smooth - lo) / span


def _checker(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    cell = int(rng.integers(4, max(5, min(h, w) // 4)))
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    board = ((yy // cell + xx // cell) % 2).astype(np.float64)
    a, b = rng.uniform(0.05, 0.45, size=3), rng.uniform(0.55, 0.95, size=3)
    image = a[:, None, None] + (b - a)[:, None, None] * board[None]
    return 0.7 * image + 0.3 * _blobs(rng, h, w)


_BUILDERS = {"gradient": _gradient, "blobs": _blobs, "checker": _checker}


def generate_scene(seed: int, size: int | tuple[int, int], kind: str | None = None) -> CleanScene:
    """Build a reproducible clean image; ``kind`` is drawn from ``seed`` when omitted."""
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    if kind is None:
        kind = SCENE_KINDS[int(rng.integers(len(SCENE_KINDS)))]
    if kind not in _BUILDERS:
        raise InputError(f"unknown scene kind {kind!r}; choose from {', '.join(SCENE_KINDS)}")
    image = np.clip(_BUILDERS[kind](rng, h, w), 0.0, 1.0).astype(np.float32)
    return CleanScene(image=image, seed=seed, kind=kind)
