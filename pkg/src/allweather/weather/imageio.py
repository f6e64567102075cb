"""Image files: bit-exact raw float format and 8-bit PNG.

Raw layout: magic ``TWIMG1``, three little-endian u32 dims (C, H, W), then
C·H·W little-endian float32 values in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from allweather.errors import DimensionError, FormatError, TruncatedFileError

TWIMG_MAGIC = b"TWIMG1"
_DIMS = struct.Struct("<3I")


def write_twimg(path: Path | str, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3:
        raise DimensionError(f"raw images are [C, H, W], got shape {image.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(TWIMG_MAGIC)
        f.write(_DIMS.pack(*image.shape))
        f.write(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_twimg(path: Path | str) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = len(TWIMG_MAGIC) + _DIMS.size
    if raw[: len(TWIMG_MAGIC)] != TWIMG_MAGIC:
        if len(raw) < len(TWIMG_MAGIC) and TWIMG_MAGIC.startswith(raw):
            raise TruncatedFileError(f"{path}: file ends inside the header")
        raise FormatError(f"{path}: not a TWIMG1 file (magic {raw[:6]!r})")
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: file ends inside the header")
    dims = _DIMS.unpack_from(raw, len(TWIMG_MAGIC))
    count = int(np.prod(dims))
    if len(raw) < header + 4 * count:
        raise TruncatedFileError(
            f"{path}: expected {count} values for shape {dims}, file holds {(len(raw) - header) // 4}"
        )
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=header)
    return values.reshape(dims).astype(np.float32)


def read_png(path: Path | str) -> np.ndarray:
    """Load an image as ``[3, H, W]`` float32 in [0, 1]."""
    with Image.open(path) as img:
        array = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(array.transpose(2, 0, 1))


def write_png(path: Path | str, image: np.ndarray) -> None:
    """Save ``[3, H, W]``, ``[1, H, W]`` or ``[H, W]`` values in [0, 1] as 8-bit PNG."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    if image.ndim == 3:
        if image.shape[0] != 3:
            raise DimensionError(f"PNG export needs 1 or 3 channels, got {image.shape}")
        data = image.transpose(1, 2, 0)
    elif image.ndim == 2:
        data = image
    else:
        raise DimensionError(f"cannot write shape {image.shape} as PNG")
    pixels = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path, format="PNG")


def read_image(path: Path | str) -> np.ndarray:
    return read_png(path) if Path(path).suffix.lower() == ".png" else read_twimg(path)


def write_image(path: Path | str, image: np.ndarray) -> None:
    if Path(path).suffix.lower() == ".png":
        write_png(path, image)
    else:
        write_twimg(path, image)
