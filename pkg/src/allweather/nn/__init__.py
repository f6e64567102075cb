"""Network components built on :mod:`allweather.tensor`."""

from allweather.nn.attention import Attention, AttentionConfig
from allweather.nn.decoder import ProjectionTail, TaskFeature, TaskFusion, WeatherDecoder
from allweather.nn.encoder import Encoder, FeaturePyramid, PatchMerge, TransformerBlock
from allweather.nn.network import RestorationNet, count_parameters, restore_image
from allweather.nn.params import ParameterScope, ParameterStore

__all__ = [
    "Attention",
    "AttentionConfig",
    "Encoder",
    "FeaturePyramid",
    "ParameterScope",
    "ParameterStore",
    "PatchMerge",
    "ProjectionTail",
    "RestorationNet",
    "TaskFeature",
    "TaskFusion",
    "TransformerBlock",
    "WeatherDecoder",
    "count_parameters",
    "restore_image",
]
