"""Configuration loading, merging, overrides and templating."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any, Iterable

import yaml

from allweather.config.defaults import DEFAULT_CONFIG
from allweather.config.models import SECTIONS, Config, ConfigError


def load_config(path: Path | None = None, overrides: Iterable[str] = ()) -> Config:
    """Load configuration from a YAML file.

    Args:
        path: Path to config file. Without one, ``./allweather.yaml`` is used
              when it exists, otherwise the built-in defaults.
        overrides: ``section.key=value`` strings applied after the file.

    Returns:
        Loaded Config object

    Raises:
        ConfigError: If the file is invalid, or names an unknown key
    """
    import allweather.config as cfg

    data: dict[str, Any] = {}
    config_path = path if path is not None else cfg.CONFIG_PATH
    if path is not None and not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")

    if config_path.exists():
        try:
            with open(config_path) as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {config_path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{config_path}: top level must be a mapping")

    merged = _deep_merge(DEFAULT_CONFIG, data)
    for item in overrides:
        apply_override(merged, item)

    return Config.from_dict(merged)


def _deep_merge(base: dict, override: dict) -> dict:
    """Deep merge override into base."""
    result = copy.deepcopy(base)
    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = value
    return result


def apply_override(data: dict, item: str) -> None:
    """Apply one ``section.key=value`` override in place.

    The value is parsed with YAML scalar rules, so ``on``/``off`` become
    booleans and ``[100, 150]`` becomes a list.
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    dotted, raw = item.split("=", 1)
    section, _, key = dotted.strip().partition(".")
    if section not in SECTIONS or not key:
        raise ConfigError(f"override {item!r}: unknown key {dotted.strip()!r}")
    if key not in DEFAULT_CONFIG[section]:
        raise ConfigError(f"override {item!r}: unknown key {dotted.strip()!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigError(f"override {item!r}: cannot parse value: {e}") from None
    data.setdefault(section, {})[key] = value


def dump_config(config: Config) -> str:
    """Render the effective configuration as YAML."""
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


def generate_template() -> str:
    """Generate a template configuration file."""
    return """# allweather configuration
# Location: ./allweather.yaml (or pass --config PATH)
# Any key can also be overridden per command: --set section.key=value

# Restoration network
network:
  hierarchical: true        # false = single-scale transformer baseline
  intra_pt: true            # intra-patch transformer branch per stage (on/off)
  weather_queries: true     # learnable weather-type query decoder (on/off)
  strides: [2, 2, 2, 2]     # per-stage downsampling; product must divide the image size
  dims: [16, 32, 64, 128]   # per-stage embedding dims
  heads: [1, 2, 4, 8]       # attention heads; dims must divide evenly
  reduction_ratios: [4, 2, 2, 1]        # key/value token compression R per stage
  intra_reduction_ratios: [8, 4, 2, 1]  # R used inside the intra-patch branch
  depths: [2, 2, 2, 2]      # transformer blocks per stage
  merge_kernels: [3, 3, 3, 3]  # overlapped patch merging kernels (> stride)
  mlp_ratio: 4              # feed-forward hidden width multiplier
  num_queries: 8            # weather-type queries (512 at full scale)
  decoder_depth: 2          # decoder blocks

# Loss: smooth L1 + lambda * frozen-feature MSE
loss:
  lambda_perceptual: 0.04
  feature_seed: 1234
  feature_channels: [8, 16, 32]  # strided 3x3 conv layers of the frozen extractor
  feature_taps: [1, 2, 3]        # layers whose outputs enter the feature loss

# Learning-rate schedule
schedule:
  base_lr: 0.0002
  halve_epochs: [100, 150]  # lr is halved at each of these epochs
  total_epochs: 200
  batch_size: 4             # 32 at full scale

# Training loop
training:
  seed: 0                   # parameter init and shuffling
  grad_clip: 1.0            # global gradient-norm clip
  clip_gradients: true      # false trains without clipping
  max_steps: null           # stop early after this many optimizer steps
  val_fraction: 0.125       # last rows of the manifest held out for validation
  checkpoint_every: 0       # epochs between checkpoints; 0 = only at the end

# Synthetic data generation
data:
  seed: 0
  count: 8
  size: 64                  # square images; must be divisible by 32 with the defaults
  mix: uniform              # uniform | paper | "snow=0.5,raindrop=0.25,rain_fog=0.25"
  intensity: [0.3, 0.9]     # degradation intensity range
  workers: 1                # threads used for generation

# Logging (relative paths resolve under the working directory)
logging:
  level: info  # debug | info | warn | error
  file: null
  error_file: null

# Tracing (Langfuse)
tracing:
  enabled: false
  # public_key: pk-lf-...  # Or use public_key_env
  # secret_key: sk-lf-...  # Or use secret_key_env
  # public_key_env: LANGFUSE_PUBLIC_KEY
  # secret_key_env: LANGFUSE_SECRET_KEY
  host: https://cloud.langfuse.com  # Or self-hosted URL
"""


def save_template(path: Path | None = None) -> Path:
    """Write the template configuration; returns the path written."""
    import allweather.config as cfg

    config_path = path or cfg.CONFIG_PATH
    config_path.parent.mkdir(parents=True, exist_ok=True)
    config_path.write_text(generate_template())
    return config_path
