"""Configuration loading and validation for allweather.

* :mod:`allweather.config.defaults`: default values and the config path
* :mod:`allweather.config.models`: the typed dataclass schema
* :mod:`allweather.config.loader`: load/merge/override/template
"""

from __future__ import annotations

from allweather.config.defaults import CONFIG_PATH, DEFAULT_CONFIG
from allweather.config.loader import (
    _deep_merge,
    apply_override,
    dump_config,
    generate_template,
    load_config,
    save_template,
)
from allweather.config.models import (
    ABLATIONS,
    BENCHMARK_MIX,
    BENCHMARK_MIX_NAMES,
    KINDS,
    Config,
    ConfigError,
    DataConfig,
    LoggingConfig,
    LossConfig,
    NetworkConfig,
    ScheduleConfig,
    TracingConfig,
    TrainingConfig,
    parse_mix,
)

__all__ = [
    "ABLATIONS",
    "BENCHMARK_MIX",
    "BENCHMARK_MIX_NAMES",
    "CONFIG_PATH",
    "DEFAULT_CONFIG",
    "KINDS",
    "Config",
    "ConfigError",
    "DataConfig",
    "LoggingConfig",
    "LossConfig",
    "NetworkConfig",
    "ScheduleConfig",
    "TracingConfig",
    "TrainingConfig",
    "apply_override",
    "dump_config",
    "generate_template",
    "load_config",
    "parse_mix",
    "save_template",
    "_deep_merge",
]
