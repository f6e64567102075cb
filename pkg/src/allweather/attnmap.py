"""Weather-query attention maps over the deepest encoder grid."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

from allweather.errors import DimensionError, InputError
from allweather.nn.network import RestorationNet, to_network_range
from allweather.tensor import Tensor
from allweather.weather.imageio import write_png

logger = logging.getLogger(__name__)


def query_weights(net: RestorationNet, image: np.ndarray) -> np.ndarray:
    """Head-averaged decoder attention ``[Kq, h, w]`` for one [0, 1] image ``[3, H, W]``.

    Each map is a distribution over the grid and sums to 1.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise DimensionError(f"expected one image [3, H, W], got {image.shape}")
    net.validate(image.shape[1], image.shape[2])
    batch = Tensor(to_network_range(np.asarray(image, dtype=np.float32))[None])
    return net.attention_maps(batch)[0]


def upscale(maps: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour resize of ``[..., h, w]`` maps to ``height×width``."""
    h, w = maps.shape[-2:]
    return maps.repeat(height // h, axis=-2).repeat(width // w, axis=-1)


def normalize(weights: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    low, high = float(weights.min()), float(weights.max())
    if high == low:
        return np.zeros_like(weights, dtype=np.float32)
    return ((weights - low) / (high - low)).astype(np.float32)


def check_queries(queries: Sequence[int], num_queries: int) -> list[int]:
    bad = [q for q in queries if not 0 <= q < num_queries]
    if bad:
        raise InputError(f"query index {bad[0]} out of range; the network has {num_queries} queries")
    return list(queries)


def dump_attention(
    net: RestorationNet,
    image: np.ndarray,
    out_dir: Path | str,
    queries: Sequence[int] | None = None,
) -> list[Path]:
    """Write one grayscale PNG per selected query, upscaled to the input size."""
    if net.num_queries == 0:
        raise InputError("network has no weather-query decoder (weather_queries is off)")
    selected = check_queries(range(net.num_queries) if queries is None else queries, net.num_queries)
    weights = query_weights(net, image)
    maps = upscale(weights, image.shape[1], image.shape[2])

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for q in selected:
        path = out_dir / f"query_{q:03d}.png"
        write_png(path, normalize(maps[q]))
        written.append(path)
    logger.info("Wrote %d attention maps to %s", len(written), out_dir)
    return written
