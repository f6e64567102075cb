"""Configuration data model: typed dataclasses + ConfigError."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

ABLATIONS = ("base", "he", "he_intra", "full")
KINDS = ("raindrop", "rain_fog", "snow")
# Image counts of the combined snow / raindrop / rain+fog training set.
BENCHMARK_MIX = {"snow": 9000, "raindrop": 1069, "rain_fog": 9000}
# Names accepted for that preset by --mix and data.mix
BENCHMARK_MIX_NAMES = ("paper", "paper-mix", "benchmark")


class ConfigError(Exception):
    """Configuration error."""

    pass


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


def _ints(name: str, values: Any, length: int | None = None) -> list[int]:
    if not isinstance(values, (list, tuple)) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in values
    ):
        raise ConfigError(f"{name} must be a list of integers, got {values!r}")
    if length is not None and len(values) != length:
        raise ConfigError(f"{name} needs {length} entries, got {len(values)}")
    return list(values)


@dataclass
class NetworkConfig:
    """Encoder / decoder / tail hyperparameters and ablation toggles.

    ``hierarchical=False`` is the single-scale transformer baseline: one
    overlapped patch embedding straight to the deepest resolution at
    ``dims[-1]`` channels, followed by ``depths[-1]`` blocks.
    """

    hierarchical: bool = True
    intra_pt: bool = True
    weather_queries: bool = True
    strides: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    dims: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    heads: list[int] = field(default_factory=lambda: [1, 2, 4, 8])
    reduction_ratios: list[int] = field(default_factory=lambda: [4, 2, 2, 1])
    intra_reduction_ratios: list[int] = field(default_factory=lambda: [8, 4, 2, 1])
    depths: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    merge_kernels: list[int] = field(default_factory=lambda: [3, 3, 3, 3])
    mlp_ratio: int = 4
    num_queries: int = 8
    decoder_depth: int = 2

    def __post_init__(self) -> None:
        for flag in ("hierarchical", "intra_pt", "weather_queries"):
            _require(isinstance(getattr(self, flag), bool), f"network.{flag} must be on/off")
        self.strides = _ints("network.strides", self.strides, 4)
        per_stage = (
            "dims", "heads", "reduction_ratios", "intra_reduction_ratios", "depths", "merge_kernels"
        )
        for name in per_stage:
            setattr(self, name, _ints(f"network.{name}", getattr(self, name), 4))

        for i in range(4):
            stage = i + 1
            _require(self.strides[i] >= 1, f"network.strides: stage {stage} stride must be >= 1")
            _require(
                self.dims[i] >= 1 and self.heads[i] >= 1,
                f"stage {stage}: dims and heads must be >= 1",
            )
            _require(
                self.dims[i] % self.heads[i] == 0,
                f"stage {stage}: embed dim {self.dims[i]} not divisible by {self.heads[i]} heads",
            )
            _require(self.reduction_ratios[i] >= 1, f"stage {stage}: reduction ratio must be >= 1")
            _require(
                self.intra_reduction_ratios[i] >= 1,
                f"stage {stage}: intra reduction ratio must be >= 1",
            )
            _require(self.depths[i] >= 0, f"stage {stage}: depth must be >= 0")
            _require(
                self.merge_kernels[i] > self.strides[i],
                f"stage {stage}: merge kernel {self.merge_kernels[i]} must exceed stride "
                f"{self.strides[i]} (overlapped merging)",
            )
            _require(self.merge_kernels[i] % 2 == 1, f"stage {stage}: merge kernel must be odd")
        _require(self.mlp_ratio >= 1, "network.mlp_ratio must be >= 1")
        _require(self.num_queries >= 1, "network.num_queries must be >= 1")
        _require(self.decoder_depth >= 1, "network.decoder_depth must be >= 1")
        _require(
            self.hierarchical or not self.intra_pt,
            "network.intra_pt requires network.hierarchical",
        )

    @property
    def total_stride(self) -> int:
        return math.prod(self.strides)

    def ablation(self, name: str) -> NetworkConfig:
        """Return a copy configured as one rung of the ablation ladder.

        ``base`` < ``he`` (hierarchical encoder) < ``he_intra`` (+ intra-patch
        branches) < ``full`` (+ weather queries), by parameter count.
        """
        flags = {
            "base": (False, False, False),
            "he": (True, False, False),
            "he_intra": (True, True, False),
            "full": (True, True, True),
        }
        if name not in flags:
            raise ConfigError(f"unknown ablation {name!r}; choose from {', '.join(ABLATIONS)}")
        hierarchical, intra_pt, queries = flags[name]
        return dataclasses.replace(
            self, hierarchical=hierarchical, intra_pt=intra_pt, weather_queries=queries
        )


@dataclass
class LossConfig:
    """Smooth L1 plus ``lambda_perceptual`` times the frozen-feature MSE."""

    lambda_perceptual: float = 0.04
    feature_seed: int = 1234
    feature_channels: list[int] = field(default_factory=lambda: [8, 16, 32])
    feature_taps: list[int] = field(default_factory=lambda: [1, 2, 3])

    def __post_init__(self) -> None:
        lam = self.lambda_perceptual
        _require(
            isinstance(lam, (int, float))
            and not isinstance(lam, bool)
            and math.isfinite(lam)
            and lam >= 0,
            f"loss.lambda_perceptual must be finite and >= 0, got {lam!r}",
        )
        self.lambda_perceptual = float(lam)
        self.feature_channels = _ints("loss.feature_channels", self.feature_channels)
        _require(len(self.feature_channels) >= 1, "loss.feature_channels must not be empty")
        self.feature_taps = _ints("loss.feature_taps", self.feature_taps)
        _require(
            len(self.feature_taps) >= 1
            and all(1 <= t <= len(self.feature_channels) for t in self.feature_taps),
            f"loss.feature_taps must index layers 1..{len(self.feature_channels)}",
        )


@dataclass
class ScheduleConfig:
    """Learning-rate schedule: halve at each listed epoch."""

    base_lr: float = 0.0002
    halve_epochs: list[int] = field(default_factory=lambda: [100, 150])
    total_epochs: int = 200
    batch_size: int = 4

    def __post_init__(self) -> None:
        _require(self.base_lr > 0, "schedule.base_lr must be > 0")
        _require(self.total_epochs >= 1, "schedule.total_epochs must be >= 1")
        _require(self.batch_size >= 1, "schedule.batch_size must be >= 1")
        self.halve_epochs = _ints("schedule.halve_epochs", self.halve_epochs)
        pairs = zip(self.halve_epochs, self.halve_epochs[1:])
        _require(
            all(a < b for a, b in pairs), "schedule.halve_epochs must be strictly increasing"
        )
        _require(
            all(0 <= e < self.total_epochs for e in self.halve_epochs),
            f"schedule.halve_epochs must lie in [0, {self.total_epochs})",
        )


@dataclass
class TrainingConfig:
    seed: int = 0
    grad_clip: float = 1.0
    clip_gradients: bool = True
    max_steps: int | None = None
    val_fraction: float = 0.125
    checkpoint_every: int = 0  # epochs; 0 = only at the end

    def __post_init__(self) -> None:
        _require(self.grad_clip > 0, "training.grad_clip must be > 0")
        _require(0.0 <= self.val_fraction < 1.0, "training.val_fraction must be in [0, 1)")
        _require(self.max_steps is None or self.max_steps >= 1, "training.max_steps must be >= 1")
        _require(self.checkpoint_every >= 0, "training.checkpoint_every must be >= 0")

    @property
    def clip_norm(self) -> float | None:
        return self.grad_clip if self.clip_gradients else None


@dataclass
class DataConfig:
    """Synthetic dataset generation."""

    seed: int = 0
    count: int = 8
    size: int = 64
    mix: Any = "uniform"  # uniform | paper | {kind: weight}
    intensity: list[float] = field(default_factory=lambda: [0.3, 0.9])
    workers: int = 1

    def __post_init__(self) -> None:
        _require(self.count >= 1, "data.count must be >= 1")
        _require(self.size >= 1, "data.size must be >= 1")
        _require(self.workers >= 1, "data.workers must be >= 1")
        low, high = self.intensity
        _require(0 < low <= high <= 1, "data.intensity must satisfy 0 < low <= high <= 1")
        self.mix_weights()

    def mix_weights(self) -> dict[str, float]:
        """Resolve ``mix`` to per-kind weights summing to 1."""
        return parse_mix(self.mix)


def parse_mix(mix: Any) -> dict[str, float]:
    """Resolve a mix to weights over KINDS.

    Accepts ``uniform``, ``paper`` (also ``paper-mix`` or ``benchmark``),
    ``kind=w,...`` or a mapping of weights.
    """
    if mix == "uniform":
        return {kind: 1.0 / len(KINDS) for kind in KINDS}
    if mix in BENCHMARK_MIX_NAMES:
        total = sum(BENCHMARK_MIX.values())
        return {kind: BENCHMARK_MIX[kind] / total for kind in KINDS}
    if isinstance(mix, str):
        try:
            mix = {
                k.strip(): float(v) for k, v in (item.split("=", 1) for item in mix.split(","))
            }
        except ValueError:
            raise ConfigError(
                f"cannot parse mix {mix!r}; expected uniform, paper or kind=weight,..."
            ) from None
    if not isinstance(mix, dict):
        raise ConfigError(f"mix must be uniform, paper or a mapping, got {mix!r}")
    unknown = sorted(set(mix) - set(KINDS))
    _require(not unknown, f"mix: unknown kinds {unknown}; known kinds are {', '.join(KINDS)}")
    weights = {kind: float(mix.get(kind, 0.0)) for kind in KINDS}
    _require(all(w >= 0 for w in weights.values()), "mix weights must be >= 0")
    _require(
        abs(sum(weights.values()) - 1.0) <= 1e-6,
        f"mix weights must sum to 1, got {sum(weights.values()):.6g}",
    )
    return weights


@dataclass
class LoggingConfig:
    """Logging configuration."""

    level: str = "info"
    file: str | None = None
    error_file: str | None = None

    def __post_init__(self) -> None:
        _require(
            self.level in ("debug", "info", "warn", "warning", "error"),
            f"logging.level must be debug|info|warn|error, got {self.level!r}",
        )

    def get_log_path(self) -> Path | None:
        return self._resolve(self.file)

    def get_error_log_path(self) -> Path | None:
        return self._resolve(self.error_file)

    @staticmethod
    def _resolve(path_str: str | None) -> Path | None:
        """Absolute/~ paths as-is, relative paths under the working directory."""
        if not path_str:
            return None
        p = Path(path_str).expanduser()
        return p if p.is_absolute() else Path.cwd() / p


@dataclass
class TracingConfig:
    """Langfuse tracing configuration."""

    enabled: bool = False
    public_key: str | None = None
    secret_key: str | None = None
    public_key_env: str | None = None
    secret_key_env: str | None = None
    host: str = "https://cloud.langfuse.com"

    def get_public_key(self) -> str | None:
        """Get public key from config or environment variable."""
        if self.public_key:
            return self.public_key
        return os.environ.get(self.public_key_env or "LANGFUSE_PUBLIC_KEY")

    def get_secret_key(self) -> str | None:
        """Get secret key from config or environment variable."""
        if self.secret_key:
            return self.secret_key
        return os.environ.get(self.secret_key_env or "LANGFUSE_SECRET_KEY")

    def is_configured(self) -> bool:
        return self.enabled and bool(self.get_public_key()) and bool(self.get_secret_key())


SECTIONS: dict[str, type] = {
    "network": NetworkConfig,
    "loss": LossConfig,
    "schedule": ScheduleConfig,
    "training": TrainingConfig,
    "data": DataConfig,
    "logging": LoggingConfig,
    "tracing": TracingConfig,
}


@dataclass
class Config:
    """Main configuration object."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    data: DataConfig = field(default_factory=DataConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    tracing: TracingConfig = field(default_factory=TracingConfig)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Config:
        """Create Config from dictionary; unknown sections or keys are errors."""
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")

        sections: dict[str, Any] = {}
        for name, section_cls in SECTIONS.items():
            values = data.get(name) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"config section {name!r} must be a mapping")
            known = {f.name for f in dataclasses.fields(section_cls)}
            bad = sorted(set(values) - known)
            if bad:
                raise ConfigError(f"unknown key(s) in {name}: {', '.join(bad)}")
            try:
                sections[name] = section_cls(**values)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"invalid {name} section: {e}") from None
        return cls(**sections)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)
