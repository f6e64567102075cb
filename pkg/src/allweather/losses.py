"""Training objective: smooth L1 plus a frozen-feature perceptual term."""

from __future__ import annotations

import numpy as np

from allweather.config.models import LossConfig
from allweather.errors import DimensionError
from allweather.nn.layers import Conv2d
from allweather.nn.params import ParameterStore
from allweather.tensor import Function, Tensor, gelu, mean, mul, sub


class SmoothL1(Function):
    """Mean of ``0.5·E²`` where ``|E| < 1`` and ``|E| - 0.5`` elsewhere, ``E = pred - gt``."""

    name = "smooth_l1"

    def forward(self, pred, gt):
        if pred.shape != gt.shape:
            raise DimensionError(f"smooth_l1: prediction {pred.shape} vs target {gt.shape}")
        self.diff = pred - gt
        self.small = np.abs(self.diff) < 1.0
        per_element = np.where(self.small, 0.5 * self.diff * self.diff, np.abs(self.diff) - 0.5)
        return np.asarray(per_element.mean())

    def backward(self, grad):
        local = np.where(self.small, self.diff, np.sign(self.diff)) / self.diff.size
        return grad * local, -grad * local


def smooth_l1(pred: Tensor, gt: Tensor) -> Tensor:
    return SmoothL1.apply(pred, gt)


class FeatureExtractor:
    """Seeded, never-trained stack of strided 3×3 convolutions with GELU.

    Stands in for a pretrained classification backbone: the loss compares
    images in a fixed nonlinear feature space.
    """

    def __init__(self, cfg: LossConfig, in_channels: int = 3):
        self.taps = set(cfg.feature_taps)
        self.store = ParameterStore(cfg.feature_seed, trainable=False)
        root = self.store.scope("features")
        channels = [in_channels, *cfg.feature_channels]
        self.layers = [
            Conv2d(root.scope(f"conv{i + 1}"), channels[i], channels[i + 1], 3, stride=2, padding=1)
            for i in range(len(cfg.feature_channels))
        ]

    def __call__(self, x: Tensor) -> list[Tensor]:
        features = []
        for i, layer in enumerate(self.layers, start=1):
            x = gelu(layer(x))
            if i in self.taps:
                features.append(x)
        return features


def feature_loss(pred: Tensor, gt: Tensor, extractor: FeatureExtractor) -> Tensor:
    """Average over tapped layers of the feature-space mean squared error."""
    if pred.shape != gt.shape:
        raise DimensionError(f"feature_loss: prediction {pred.shape} vs target {gt.shape}")
    terms = []
    for fp, fg in zip(extractor(pred), extractor(gt)):
        diff = sub(fp, fg)
        terms.append(mean(mul(diff, diff)))
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total / float(len(terms))


class RestorationLoss:
    """``smooth_l1 + λ · feature_loss``; the feature term is skipped when λ = 0."""

    def __init__(self, cfg: LossConfig | None = None):
        self.cfg = cfg or LossConfig()
        self.extractor = FeatureExtractor(self.cfg)

    def __call__(self, pred: Tensor, gt: Tensor) -> Tensor:
        loss = smooth_l1(pred, gt)
        if self.cfg.lambda_perceptual == 0.0:
            return loss
        return loss + feature_loss(pred, gt, self.extractor) * self.cfg.lambda_perceptual


def total_loss(pred: Tensor, gt: Tensor, cfg: LossConfig | None = None) -> Tensor:
    return RestorationLoss(cfg)(pred, gt)
