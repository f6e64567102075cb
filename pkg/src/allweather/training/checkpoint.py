"""Binary checkpoints: parameters, optimizer moments and the step counter.

Layout (little-endian): magic ``TWCKPT``, u32 version, u32 tensor count, then
per tensor u16 name length, UTF-8 name, u8 rank, u32 dims, float32 values.
The optimizer blob follows with the same framing, then a trailing u64 step.
Nothing may follow the step.
"""

from __future__ import annotations

import io
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

from allweather.errors import FormatError, TruncatedFileError

logger = logging.getLogger(__name__)

MAGIC = b"TWCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @property
    def num_params(self) -> int:
        return sum(int(a.size) for a in self.params.values())


def _write_block(f: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(tensors)))
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        f.write(struct.pack("<H", len(encoded)))
        f.write(encoded)
        f.write(struct.pack("<B", array.ndim))
        f.write(struct.pack(f"<{array.ndim}I", *array.shape))
        f.write(np.ascontiguousarray(array, dtype="<f4").tobytes())


def _read_exact(f: BinaryIO, size: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise TruncatedFileError(f"checkpoint ends inside {what}")
    return data


def _read_block(f: BinaryIO) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(f, 4, "a tensor count"))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(f, 2, "a name length"))
        name = _read_exact(f, name_len, "a tensor name").decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(f, 1, f"the rank of {name!r}"))
        dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, f"the dims of {name!r}"))
        count_values = int(np.prod(dims)) if rank else 1
        raw = _read_exact(f, 4 * count_values, f"the data of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)
    return tensors


def save_checkpoint(path: Path | str, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    buffer.write(MAGIC)
    buffer.write(struct.pack("<I", VERSION))
    _write_block(buffer, checkpoint.params)
    _write_block(buffer, checkpoint.optimizer)
    buffer.write(struct.pack("<Q", checkpoint.step))
    path.write_bytes(buffer.getvalue())
    logger.debug(
        "Saved checkpoint %s (%d tensors, step %d)", path, len(checkpoint.params), checkpoint.step
    )
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            if len(magic) < len(MAGIC) and MAGIC.startswith(magic):
                raise TruncatedFileError(f"{path}: checkpoint ends inside the header")
            raise FormatError(f"{path}: not a checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "the version"))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        try:
            params = _read_block(f)
            optimizer = _read_block(f)
            (step,) = struct.unpack("<Q", _read_exact(f, 8, "the step counter"))
        except TruncatedFileError as e:
            raise TruncatedFileError(f"{path}: {e}") from None
        extra = len(f.read())
        if extra:
            raise TruncatedFileError(f"{path}: {extra} unexpected bytes after the step counter")
    return Checkpoint(params=params, optimizer=optimizer, step=step)
