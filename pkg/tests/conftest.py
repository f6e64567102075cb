"""Shared fixtures: a small network and a tiny generated dataset."""

from __future__ import annotations

from pathlib import Path

import pytest

from allweather.config import Config, LossConfig, NetworkConfig, ScheduleConfig, TrainingConfig
from allweather.weather import Manifest, gen_dataset


def small_network(**overrides) -> NetworkConfig:
    """Four-stage network that accepts 32×32 inputs and builds in milliseconds."""
    values = dict(
        dims=[8, 8, 16, 16],
        heads=[1, 1, 2, 2],
        depths=[1, 1, 1, 1],
        num_queries=4,
        decoder_depth=1,
        mlp_ratio=2,
    )
    values.update(overrides)
    return NetworkConfig(**values)


@pytest.fixture
def small_cfg() -> NetworkConfig:
    return small_network()


@pytest.fixture
def train_config() -> Config:
    """Small network, no validation split, two steps per epoch on four pairs."""
    return Config(
        network=small_network(),
        loss=LossConfig(feature_channels=[4, 4], feature_taps=[1, 2]),
        schedule=ScheduleConfig(batch_size=2, total_epochs=10, halve_epochs=[5]),
        training=TrainingConfig(val_fraction=0.0),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """Four 32×32 pairs with the uniform mix."""
    root = tmp_path_factory.mktemp("tiny")
    gen_dataset(count=4, mix="uniform", seed=3, out_dir=root, size=32)
    return root


@pytest.fixture
def tiny_manifest(tiny_dataset: Path) -> Manifest:
    return Manifest.load(tiny_dataset)
