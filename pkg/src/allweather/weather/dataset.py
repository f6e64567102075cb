"""Paired dataset generation and the tab-separated dataset manifest."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from allweather.config.models import KINDS, parse_mix
from allweather.errors import FormatError, InputError
from allweather.weather.degradation import synthesize
from allweather.weather.imageio import read_image, write_twimg
from allweather.weather.scenes import generate_scene

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"


@dataclass
class ManifestRow:
    """A single clean/degraded pair."""

    clean_path: str
    degraded_path: str
    kind: str
    seed: int

    def to_line(self) -> str:
        return f"{self.clean_path}\t{self.degraded_path}\t{self.kind}\t{self.seed}"

    @classmethod
    def from_line(cls, line: str, lineno: int = 0) -> ManifestRow:
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise FormatError(
                f"manifest line {lineno}: expected 4 tab-separated fields, got {len(parts)}"
            )
        clean, degraded, kind, seed = parts
        if kind not in KINDS:
            raise FormatError(f"manifest line {lineno}: unknown kind {kind!r}")
        try:
            return cls(clean_path=clean, degraded_path=degraded, kind=kind, seed=int(seed))
        except ValueError:
            raise FormatError(f"manifest line {lineno}: seed {seed!r} is not an integer") from None


@dataclass
class Manifest:
    """Ordered list of dataset pairs; paths are relative to ``root``."""

    root: Path = field(default_factory=Path)
    rows: list[ManifestRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[ManifestRow]:
        return iter(self.rows)

    @classmethod
    def load(cls, path: Path | str) -> Manifest:
        """Load a manifest file, or ``manifest.tsv`` inside a dataset directory."""
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        lines = path.read_text().splitlines()
        rows = [ManifestRow.from_line(line, i + 1) for i, line in enumerate(lines) if line.strip()]
        return cls(root=path.parent, rows=rows)

    def save(self, path: Path | str | None = None) -> Path:
        manifest_path = Path(path) if path is not None else self.root / MANIFEST_NAME
        manifest_path.parent.mkdir(parents=True, exist_ok=True)
        manifest_path.write_text("".join(row.to_line() + "\n" for row in self.rows))
        return manifest_path

    def add(self, clean_path: str, degraded_path: str, kind: str, seed: int) -> None:
        self.rows.append(ManifestRow(clean_path, degraded_path, kind, seed))

    def get(self, kind: str | None = None) -> list[ManifestRow]:
        """Rows matching ``kind`` (all rows when None)."""
        return [r for r in self.rows if kind is None or r.kind == kind]

    def kinds(self) -> list[str]:
        return sorted({r.kind for r in self.rows})

    def split(self, val_fraction: float) -> tuple[Manifest, Manifest]:
        """Hold out the last ``round(len * val_fraction)`` rows for validation."""
        n_val = int(round(len(self.rows) * val_fraction))
        if val_fraction > 0 and n_val == 0 and len(self.rows) > 1:
            n_val = 1
        cut = len(self.rows) - n_val
        return Manifest(self.root, self.rows[:cut]), Manifest(self.root, self.rows[cut:])

    def load_pair(self, row: ManifestRow) -> tuple[np.ndarray, np.ndarray]:
        """Read ``(clean, degraded)`` arrays for one row."""
        return read_image(self.root / row.clean_path), read_image(self.root / row.degraded_path)


def apportion(count: int, weights: dict[str, float]) -> dict[str, int]:
    """Largest-remainder split of ``count`` by ``weights`` (ties go to the earlier kind)."""
    exact = {k: count * w for k, w in weights.items()}
    counts = {k: int(np.floor(v)) for k, v in exact.items()}
    leftover = count - sum(counts.values())
    order = sorted(weights, key=lambda k: (-(exact[k] - counts[k]), KINDS.index(k)))
    for kind in order[:leftover]:
        counts[kind] += 1
    return counts


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _write_sample(
    out_dir: Path, index: int, kind: str, seed: int, size: int, intensity: tuple[float, float]
) -> ManifestRow:
    rng = np.random.default_rng(seed)
    strength = float(rng.uniform(*intensity))
    scene = generate_scene(int(rng.integers(2**32)), size)
    sample = synthesize(kind, scene.image, int(rng.integers(2**32)), strength)
    clean_rel = f"clean/{index:05d}.twimg"
    degraded_rel = f"degraded/{index:05d}_{kind}.twimg"
    write_twimg(out_dir / clean_rel, sample.clean)
    write_twimg(out_dir / degraded_rel, sample.degraded)
    return ManifestRow(clean_rel, degraded_rel, kind, seed)


def gen_dataset(
    count: int,
    mix: Any,
    seed: int,
    out_dir: Path | str,
    size: int = 64,
    intensity: tuple[float, float] = (0.3, 0.9),
    workers: int = 1,
) -> Manifest:
    """Write ``count`` clean/degraded pairs plus ``manifest.tsv`` under ``out_dir``.

    Kind counts follow ``mix`` (largest remainder); the kind order is a seeded
    shuffle. Sample ``i`` derives its own seed from ``(seed, i)``, so output
    does not depend on ``workers``.
    """
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    weights = parse_mix(mix)
    counts = apportion(count, weights)
    kinds = [kind for kind in KINDS for _ in range(counts[kind])]
    np.random.default_rng(seed).shuffle(kinds)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (out_dir, i, kind, sample_seed(seed, i), size, tuple(intensity))
        for i, kind in enumerate(kinds)
    ]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda job: _write_sample(*job), jobs))
    else:
        rows = [_write_sample(*job) for job in jobs]

    manifest = Manifest(root=out_dir, rows=rows)
    manifest.save()
    summary = ", ".join(f"{k}={counts[k]}" for k in KINDS)
    logger.info("Wrote %d pairs to %s (%s)", count, out_dir, summary)
    return manifest
