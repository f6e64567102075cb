"""Finite-difference verification of every registered backward rule."""

from __future__ import annotations

from typing import Iterable

from allweather.errors import InputError
from allweather.gradcheck.base import (
    BLOCK_TOLERANCE,
    OP_TOLERANCE,
    STEP,
    Probe,
    ProbeCase,
    ProbeResult,
    absolute_error,
    relative_error,
)
from allweather.gradcheck.probes import (
    AddProbe,
    AttentionProbe,
    AvgPoolProbe,
    ConcatProbe,
    Conv2dProbe,
    DecoderBlockProbe,
    DepthwiseConvProbe,
    DivProbe,
    GeluProbe,
    GetItemProbe,
    IntraPatchProbe,
    LayerNormProbe,
    LinearProbe,
    MatMulProbe,
    MeanProbe,
    MulProbe,
    NegProbe,
    NetworkProbe,
    PatchMergeProbe,
    ProjectionTailProbe,
    ReshapeProbe,
    RestorationLossProbe,
    SmoothL1Probe,
    SoftmaxProbe,
    SubProbe,
    SumProbe,
    TanhProbe,
    TransformerBlockProbe,
    TransposeProbe,
    UpsampleProbe,
)

PROBE_CLASSES: list[type[Probe]] = [
    AddProbe,
    SubProbe,
    MulProbe,
    DivProbe,
    NegProbe,
    TanhProbe,
    GeluProbe,
    MatMulProbe,
    SoftmaxProbe,
    SumProbe,
    MeanProbe,
    LinearProbe,
    ReshapeProbe,
    TransposeProbe,
    ConcatProbe,
    GetItemProbe,
    UpsampleProbe,
    AvgPoolProbe,
    Conv2dProbe,
    DepthwiseConvProbe,
    LayerNormProbe,
    SmoothL1Probe,
    AttentionProbe,
    TransformerBlockProbe,
    PatchMergeProbe,
    IntraPatchProbe,
    DecoderBlockProbe,
    ProjectionTailProbe,
    RestorationLossProbe,
    NetworkProbe,
]

PROBES: dict[str, type[Probe]] = {cls.name: cls for cls in PROBE_CLASSES}


def run_probes(names: Iterable[str] | None = None, seed: int = 0) -> list[ProbeResult]:
    """Run the named probes (all of them by default) in registry order."""
    wanted = set(PROBES) if names is None else set(names)
    unknown = sorted(wanted - set(PROBES))
    if unknown:
        raise InputError(f"unknown probe(s) {', '.join(unknown)}; choose from {', '.join(PROBES)}")
    return [cls(seed=seed).run() for name, cls in PROBES.items() if name in wanted]


__all__ = [
    "BLOCK_TOLERANCE",
    "OP_TOLERANCE",
    "PROBES",
    "PROBE_CLASSES",
    "STEP",
    "Probe",
    "ProbeCase",
    "ProbeResult",
    "absolute_error",
    "relative_error",
    "run_probes",
]
