"""Weather formation models and procedural parameter generators.

All composites are evaluated in 64-bit and rounded to 32-bit once, then
optionally clamped to [0, 1].

* raindrop: ``I = (1 - M) ⊙ B + R``
* rain_fog: ``I = T ⊙ (B + Σ R_i) + (1 - T) ⊙ A``
* snow:     ``I = z ⊙ S + (1 - z) ⊙ B``
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from allweather.config.models import KINDS
from allweather.errors import ContractError, DimensionError, InputError

logger = logging.getLogger(__name__)

MAX_DROPS_PER_PIXEL = 1 / 48
SNOW_MAX_COVERAGE = 0.3


def _f64(x: np.ndarray | float) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_unit(name: str, values: np.ndarray) -> None:
    if values.size and (values.min() < 0.0 or values.max() > 1.0):
        raise ContractError(
            f"{name} must lie in [0, 1], got range [{values.min():.4g}, {values.max():.4g}]"
        )


def _check_shape(name: str, values: np.ndarray, image: np.ndarray) -> None:
    try:
        np.broadcast_shapes(values.shape, image.shape)
    except ValueError:
        raise DimensionError(f"{name} shape {values.shape} does not match image {image.shape}") from None
    if values.ndim and values.shape[-2:] != image.shape[-2:]:
        raise DimensionError(f"{name} shape {values.shape} does not match image {image.shape}")


def _finish(image: np.ndarray, clamp: bool) -> np.ndarray:
    out = image.astype(np.float32)
    return np.clip(out, 0.0, 1.0) if clamp else out


def apply_raindrop(
    clean: np.ndarray, mask: np.ndarray, residual: np.ndarray, clamp: bool = True
) -> np.ndarray:
    b, m, r = _f64(clean), _f64(mask), _f64(residual)
    _check_shape("raindrop mask", m, b)
    _check_shape("raindrop residual", r, b)
    _check_unit("raindrop mask", m)
    return _finish((1.0 - m) * b + r, clamp)


def apply_rain_fog(
    clean: np.ndarray,
    transmission: np.ndarray,
    streaks: Sequence[np.ndarray],
    airlight: np.ndarray | float,
    clamp: bool = True,
) -> np.ndarray:
    if len(streaks) == 0:
        raise ContractError("rain_fog needs at least one streak layer")
    b, t = _f64(clean), _f64(transmission)
    _check_shape("transmission", t, b)
    _check_unit("transmission", t)
    total = np.zeros_like(b)
    for layer in streaks:
        layer = _f64(layer)
        _check_shape("streak layer", layer, b)
        total = total + layer
    a = _f64(airlight)
    if a.ndim == 1:
        a = a[:, None, None]
    return _finish(t * (b + total) + (1.0 - t) * a, clamp)


def apply_snow(
    clean: np.ndarray, mask: np.ndarray, flakes: np.ndarray, clamp: bool = True
) -> np.ndarray:
    b, z, s = _f64(clean), _f64(mask), _f64(flakes)
    _check_shape("snow mask", z, b)
    _check_shape("snow flakes", s, b)
    _check_unit("snow mask", z)
    return _finish(z * s + (1.0 - z) * b, clamp)


@dataclass
class DegradationParams:
    """Generated physical parameters for one degradation.

    ``mask`` is the raindrop mask M or the snow mask z; ``residual`` the
    raindrop residual; ``transmission``/``streaks``/``airlight`` describe
    rain_fog; ``flakes`` the snow appearance S.
    """

    kind: str
    seed: int
    intensity: float
    mask: np.ndarray | None = None
    residual: np.ndarray | None = None
    transmission: np.ndarray | None = None
    streaks: list[np.ndarray] = field(default_factory=list)
    airlight: np.ndarray | None = None
    flakes: np.ndarray | None = None

    def apply(self, clean: np.ndarray, clamp: bool = True) -> np.ndarray:
        if self.kind == "raindrop":
            return apply_raindrop(clean, self.mask, self.residual, clamp)
        if self.kind == "rain_fog":
            return apply_rain_fog(clean, self.transmission, self.streaks, self.airlight, clamp)
        return apply_snow(clean, self.mask, self.flakes, clamp)

    def coverage(self) -> float:
        """Mean occlusion: M or z for drops/snow, ``1 - T`` for rain_fog."""
        if self.kind == "rain_fog":
            return float(np.mean(1.0 - self.transmission))
        return float(np.mean(self.mask))


@dataclass
class DegradationSample:
    clean: np.ndarray
    degraded: np.ndarray
    params: DegradationParams
    kind: str


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    """Low-frequency field normalized to [0, 1]."""
    smooth = ndimage.gaussian_filter(rng.random(shape), sigma, mode="wrap")
    return (smooth - smooth.min()) / max(np.ptp(smooth), 1e-12)


def _raindrop(rng: np.random.Generator, h: int, w: int, intensity: float) -> dict:
    max_drops = max(1, int(h * w * MAX_DROPS_PER_PIXEL))
    # drawn for the maximum count so lower intensities use a prefix of the same drops
    centers = rng.uniform(0, 1, size=(max_drops, 2)) * (h, w)
    base_radius = rng.uniform(1.5, 0.08 * min(h, w) + 2.0, size=max_drops)
    opacity = rng.uniform(0.6, 0.95, size=max_drops)
    tint = 0.55 + 0.35 * _smooth_field(rng, (h, w), max(h, w) / 8)

    n = int(np.floor(intensity * max_drops))
    yy, xx = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    mask = np.zeros((h, w))
    radii = base_radius[:n] * (0.5 + 0.5 * intensity)
    for (cy, cx), radius, alpha in zip(centers[:n], radii, opacity[:n]):
        dist = np.hypot(yy - cy, xx - cx)
        disc = np.clip((radius - dist) / max(radius * 0.35, 0.5), 0.0, 1.0) * alpha
        mask = np.maximum(mask, disc)
    mask = mask[None]
    residual = mask * np.stack([tint, tint, np.clip(tint * 1.05, 0, 1)])
    return {"mask": mask, "residual": residual}


def _line_kernel(length: int, angle: float) -> np.ndarray:
    size = length if length % 2 else length + 1
    kernel = np.zeros((size, size))
    c = size // 2
    for t in np.linspace(-c, c, 4 * size):
        kernel[int(round(c + t * np.sin(angle))), int(round(c + t * np.cos(angle)))] = 1.0
    return kernel / kernel.sum()


def _rain_fog(rng: np.random.Generator, h: int, w: int, intensity: float) -> dict:
    transmission = 1.0 - intensity * _smooth_field(rng, (h, w), max(h, w) / 4)
    layers = []
    for _ in range(2):
        angle = np.deg2rad(rng.uniform(60, 120))
        length = int(rng.integers(5, max(6, h // 6)))
        seeds = (rng.random((h, w)) < 0.02).astype(np.float64)
        streak = ndimage.convolve(seeds, _line_kernel(length, angle), mode="wrap")
        streak = streak / max(streak.max(), 1e-12)
        layers.append(np.repeat((0.35 * intensity * streak)[None], 3, axis=0))
    airlight = rng.uniform(0.7, 0.95, size=3)
    return {"transmission": transmission[None], "streaks": layers, "airlight": airlight}


def _snow(rng: np.random.Generator, h: int, w: int, intensity: float) -> dict:
    white = rng.random((h, w))
    blue = white - ndimage.gaussian_filter(white, 2.0, mode="wrap")
    threshold = np.quantile(blue, 1.0 - SNOW_MAX_COVERAGE * intensity)
    softness = 0.05 * max(np.ptp(blue), 1e-12)
    flakes_mask = np.clip((blue - threshold) / softness, 0.0, 1.0)
    flakes_mask = ndimage.gaussian_filter(flakes_mask, 0.6, mode="wrap")
    mask = np.clip(flakes_mask * min(1.0, 0.5 + intensity), 0.0, 1.0)
    texture = _smooth_field(rng, (h, w), 1.5)
    flakes = np.stack([0.85 + 0.15 * texture, 0.87 + 0.13 * texture, 0.9 + 0.1 * texture])
    return {"mask": mask[None], "flakes": np.clip(flakes, 0.0, 1.0)}


_GENERATORS = {"raindrop": _raindrop, "rain_fog": _rain_fog, "snow": _snow}


def gen_params(
    kind: str, seed: int, intensity: float, size: int | tuple[int, int] = 64
) -> DegradationParams:
    """Draw reproducible degradation parameters for an image of ``size``."""
    if kind not in _GENERATORS:
        raise InputError(f"unknown degradation kind {kind!r}; choose from {', '.join(KINDS)}")
    if not 0.0 < intensity <= 1.0:
        raise InputError(f"intensity must be in (0, 1], got {intensity}")
    h, w = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(seed)
    maps = _GENERATORS[kind](rng, h, w, float(intensity))
    return DegradationParams(kind=kind, seed=seed, intensity=float(intensity), **maps)


def synthesize(kind: str, clean: np.ndarray, seed: int, intensity: float) -> DegradationSample:
    """Degrade ``clean`` ``[3, H, W]`` with freshly generated parameters."""
    params = gen_params(kind, seed, intensity, clean.shape[-2:])
    degraded = params.apply(clean)
    logger.debug("Synthesized %s (seed=%d, intensity=%.3f)", kind, seed, intensity)
    return DegradationSample(clean=clean, degraded=degraded, params=params, kind=kind)
