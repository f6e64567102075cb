"""Default configuration values."""

from __future__ import annotations

from pathlib import Path

CONFIG_FILENAME = "allweather.yaml"
# Relative to the working directory.
CONFIG_PATH = Path(CONFIG_FILENAME)

# Default configuration
DEFAULT_CONFIG = {
    "network": {
        "hierarchical": True,
        "intra_pt": True,
        "weather_queries": True,
        "strides": [2, 2, 2, 2],
        "dims": [16, 32, 64, 128],
        "heads": [1, 2, 4, 8],
        "reduction_ratios": [4, 2, 2, 1],
        "intra_reduction_ratios": [8, 4, 2, 1],
        "depths": [2, 2, 2, 2],
        "merge_kernels": [3, 3, 3, 3],
        "mlp_ratio": 4,
        "num_queries": 8,
        "decoder_depth": 2,
    },
    "loss": {
        "lambda_perceptual": 0.04,
        "feature_seed": 1234,
        "feature_channels": [8, 16, 32],
        "feature_taps": [1, 2, 3],
    },
    "schedule": {
        "base_lr": 0.0002,
        "halve_epochs": [100, 150],
        "total_epochs": 200,
        "batch_size": 4,
    },
    "training": {
        "seed": 0,
        "grad_clip": 1.0,
        "clip_gradients": True,
        "max_steps": None,
        "val_fraction": 0.125,
        "checkpoint_every": 0,
    },
    "data": {
        "seed": 0,
        "count": 8,
        "size": 64,
        "mix": "uniform",
        "intensity": [0.3, 0.9],
        "workers": 1,
    },
    "logging": {
        "level": "info",
        "file": None,
        "error_file": None,
    },
    "tracing": {
        "enabled": False,
        "public_key": None,
        "secret_key": None,
        "public_key_env": None,
        "secret_key_env": None,
        "host": "https://cloud.langfuse.com",
    },
}
