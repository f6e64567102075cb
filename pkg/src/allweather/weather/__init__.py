"""Synthetic weather degradations and paired datasets."""

from allweather.weather.dataset import Manifest, ManifestRow, apportion, gen_dataset
from allweather.weather.degradation import (
    DegradationParams,
    DegradationSample,
    apply_rain_fog,
    apply_raindrop,
    apply_snow,
    gen_params,
    synthesize,
)
from allweather.weather.imageio import read_image, read_twimg, write_image, write_png, write_twimg
from allweather.weather.scenes import CleanScene, generate_scene

__all__ = [
    "CleanScene",
    "DegradationParams",
    "DegradationSample",
    "Manifest",
    "ManifestRow",
    "apply_rain_fog",
    "apply_raindrop",
    "apply_snow",
    "apportion",
    "gen_dataset",
    "gen_params",
    "generate_scene",
    "read_image",
    "read_twimg",
    "synthesize",
    "write_image",
    "write_png",
    "write_twimg",
]
