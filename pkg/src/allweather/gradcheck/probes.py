"""Gradient probes for every differentiable operation and the composite layers."""

from __future__ import annotations

import numpy as np

from allweather.config.models import LossConfig, NetworkConfig
from allweather.gradcheck.base import BLOCK_TOLERANCE, Probe, ProbeCase, leaf
from allweather.losses import RestorationLoss, smooth_l1
from allweather.nn.attention import Attention, AttentionConfig
from allweather.nn.decoder import DecoderBlock, ProjectionTail
from allweather.nn.encoder import FeaturePyramid, IntraPatchBranch, PatchMerge, TransformerBlock
from allweather.nn.network import RestorationNet
from allweather.nn.params import ParameterStore
from allweather.tensor import (
    Tensor,
    add,
    avg_pool2d,
    concat,
    conv2d,
    div,
    gelu,
    getitem,
    layernorm,
    linear,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    softmax,
    sub,
    sum_,
    tanh,
    transpose,
    upsample_nearest,
)


def _signs(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.choice([-1.0, 1.0], size=shape)


def _off_seam(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Error magnitudes in [0.1, 0.8] or [1.2, 2.0], away from the smooth L1 kink at 1."""
    near = rng.uniform(0.1, 0.8, shape)
    far = rng.uniform(1.2, 2.0, shape)
    return np.where(rng.random(shape) < 0.5, near, far)


# Elementwise and broadcasting


class AddProbe(Probe):
    name = "add"

    def build(self, rng):
        a, b = leaf(rng, (2, 3, 4)), leaf(rng, (3, 1))
        return ProbeCase([a, b], lambda: add(a, b))


class SubProbe(Probe):
    name = "sub"

    def build(self, rng):
        a, b = leaf(rng, (3, 4)), leaf(rng, (4,))
        return ProbeCase([a, b], lambda: sub(a, b))


class MulProbe(Probe):
    name = "mul"

    def build(self, rng):
        a, b = leaf(rng, (2, 3, 4)), leaf(rng, (2, 1, 4))
        return ProbeCase([a, b], lambda: mul(a, b))


class DivProbe(Probe):
    name = "div"

    def build(self, rng):
        a = leaf(rng, (3, 4))
        # denominators bounded away from zero
        b = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)) * _signs(rng, (3, 4)), requires_grad=True)
        return ProbeCase([a, b], lambda: div(a, b))


class NegProbe(Probe):
    name = "neg"

    def build(self, rng):
        a = leaf(rng, (5,))
        return ProbeCase([a], lambda: neg(a))


class TanhProbe(Probe):
    name = "tanh"

    def build(self, rng):
        a = leaf(rng, (3, 5), -2.0, 2.0)
        return ProbeCase([a], lambda: tanh(a))


class GeluProbe(Probe):
    name = "gelu"

    def build(self, rng):
        a = leaf(rng, (3, 5), -3.0, 3.0)
        return ProbeCase([a], lambda: gelu(a))


# Linear algebra and reductions


class MatMulProbe(Probe):
    name = "matmul"

    def build(self, rng):
        a, b = leaf(rng, (2, 3, 4)), leaf(rng, (4, 5))
        return ProbeCase([a, b], lambda: matmul(a, b))


class SoftmaxProbe(Probe):
    name = "softmax"

    def build(self, rng):
        a = leaf(rng, (3, 5), -2.0, 2.0)
        return ProbeCase([a], lambda: softmax(a, axis=-1))


class SumProbe(Probe):
    name = "sum"

    def build(self, rng):
        a = leaf(rng, (2, 3, 4))
        return ProbeCase([a], lambda: sum_(a, axis=1))


class MeanProbe(Probe):
    name = "mean"

    def build(self, rng):
        a = leaf(rng, (2, 3, 4))
        return ProbeCase([a], lambda: mean(a, axis=(0, 2), keepdims=True))


class LinearProbe(Probe):
    name = "linear"

    def build(self, rng):
        x, w, b = leaf(rng, (2, 3, 4)), leaf(rng, (4, 3)), leaf(rng, (3,))
        return ProbeCase([x, w, b], lambda: linear(x, w, b))


# Shape manipulation


class ReshapeProbe(Probe):
    name = "reshape"

    def build(self, rng):
        a = leaf(rng, (2, 3, 4))
        return ProbeCase([a], lambda: reshape(a, (4, 6)))


class TransposeProbe(Probe):
    name = "transpose"

    def build(self, rng):
        a = leaf(rng, (2, 3, 4))
        return ProbeCase([a], lambda: transpose(a, (2, 0, 1)))


class ConcatProbe(Probe):
    name = "concat"

    def build(self, rng):
        a, b = leaf(rng, (2, 3)), leaf(rng, (2, 2))
        return ProbeCase([a, b], lambda: concat([a, b], axis=1))


class GetItemProbe(Probe):
    name = "getitem"

    def build(self, rng):
        a = leaf(rng, (3, 4))
        # repeated column exercises scatter-add in the backward pass
        return ProbeCase([a], lambda: getitem(a, (slice(None), [0, 2, 2])))


class UpsampleProbe(Probe):
    name = "upsample_nearest"

    def build(self, rng):
        a = leaf(rng, (1, 2, 3, 3))
        return ProbeCase([a], lambda: upsample_nearest(a, 2))


class AvgPoolProbe(Probe):
    name = "avg_pool2d"

    def build(self, rng):
        a = leaf(rng, (1, 2, 4, 4))
        return ProbeCase([a], lambda: avg_pool2d(a, 2))


# Convolution and normalization


class Conv2dProbe(Probe):
    name = "conv2d"

    def build(self, rng):
        x, w, b = leaf(rng, (2, 2, 5, 5)), leaf(rng, (3, 2, 3, 3)), leaf(rng, (3,))
        return ProbeCase([x, w, b], lambda: conv2d(x, w, b, stride=2, padding=1))


class DepthwiseConvProbe(Probe):
    name = "conv2d_depthwise"

    def build(self, rng):
        x, w, b = leaf(rng, (1, 4, 4, 4)), leaf(rng, (4, 1, 3, 3)), leaf(rng, (4,))
        return ProbeCase([x, w, b], lambda: conv2d(x, w, b, padding=1, groups=4))


class LayerNormProbe(Probe):
    name = "layernorm"

    def build(self, rng):
        x = leaf(rng, (2, 3, 6), -2.0, 2.0)
        gamma, beta = leaf(rng, (6,), 0.5, 1.5), leaf(rng, (6,))
        return ProbeCase([x, gamma, beta], lambda: layernorm(x, gamma, beta))


class SmoothL1Probe(Probe):
    name = "smooth_l1"

    def build(self, rng):
        gt = leaf(rng, (2, 3, 4))
        magnitude = _off_seam(rng, (2, 3, 4))
        pred = Tensor(gt.data + magnitude * _signs(rng, (2, 3, 4)), requires_grad=True)
        return ProbeCase([pred, gt], lambda: smooth_l1(pred, gt))


# Composite layers: every parameter plus the input is perturbed


class _LayerProbe(Probe):
    tolerance = BLOCK_TOLERANCE
    max_coords = 8

    def coordinates(self, case, rng):
        coords = []
        for i, tensor in enumerate(case.inputs):
            count = min(tensor.size, self.max_coords)
            picked = rng.choice(tensor.size, size=count, replace=False)
            coords.extend((i, int(j)) for j in sorted(picked.tolist()))
        return coords


def _store(rng: np.random.Generator) -> ParameterStore:
    return ParameterStore(int(rng.integers(0, 2**31)))


class AttentionProbe(_LayerProbe):
    name = "attention"

    def build(self, rng):
        store = _store(rng)
        attn = Attention(store.scope("attn"), AttentionConfig(8, 2, 2))
        x = leaf(rng, (2, 8, 8))
        return ProbeCase([x, *store.values()], lambda: attn(x))


class TransformerBlockProbe(_LayerProbe):
    name = "transformer_block"

    def build(self, rng):
        store = _store(rng)
        block = TransformerBlock(store.scope("block"), 8, 2, 2, mlp_ratio=2)
        x = leaf(rng, (1, 16, 8))
        return ProbeCase([x, *store.values()], lambda: block(x, 4, 4))


class PatchMergeProbe(_LayerProbe):
    name = "patch_merge"

    def build(self, rng):
        store = _store(rng)
        merge = PatchMerge(store.scope("merge"), 3, 4, 3, 2)
        x = leaf(rng, (1, 3, 8, 8))
        return ProbeCase([x, *store.values()], lambda: merge.spatial(x))


class IntraPatchProbe(_LayerProbe):
    name = "intra_patch"

    def build(self, rng):
        store = _store(rng)
        branch = IntraPatchBranch(store.scope("intra"), 4, 1, 2, 2)
        x = leaf(rng, (1, 4, 8, 8))
        return ProbeCase([x, *store.values()], lambda: branch(x))


class DecoderBlockProbe(_LayerProbe):
    name = "decoder_block"

    def build(self, rng):
        store = _store(rng)
        block = DecoderBlock(store.scope("block"), 8, 2, 2)
        queries, tokens = leaf(rng, (1, 3, 8)), leaf(rng, (2, 16, 8))
        return ProbeCase([queries, tokens, *store.values()], lambda: block(queries, tokens))


class ProjectionTailProbe(_LayerProbe):
    name = "projection_tail"

    def build(self, rng):
        cfg = NetworkConfig(dims=[4, 4, 8, 8], heads=[1, 1, 1, 1])
        store = _store(rng)
        tail = ProjectionTail(store.scope("tail"), cfg)
        levels = [leaf(rng, (1, c, s, s)) for c, s in zip(cfg.dims, (8, 4, 2, 1))]
        return ProbeCase([*levels, *store.values()], lambda: tail(FeaturePyramid(levels)))


class RestorationLossProbe(_LayerProbe):
    name = "restoration_loss"

    def build(self, rng):
        cfg = LossConfig(lambda_perceptual=0.5, feature_channels=[4, 4], feature_taps=[1, 2])
        loss = RestorationLoss(cfg)
        gt = Tensor(rng.uniform(-1, 1, size=(1, 3, 8, 8)))
        magnitude = _off_seam(rng, gt.shape)
        pred = Tensor(gt.data + magnitude * _signs(rng, gt.shape), requires_grad=True)
        return ProbeCase([pred], lambda: loss(pred, gt))


class NetworkProbe(Probe):
    """Forward pass plus restoration loss on one 32×32 image, sampled over parameters."""

    name = "network"
    tolerance = BLOCK_TOLERANCE
    samples = 20

    def build(self, rng):
        net = RestorationNet(NetworkConfig(), seed=int(rng.integers(0, 2**31)))
        image = Tensor(rng.uniform(-1, 1, size=(1, 3, 32, 32)))
        clean = Tensor(rng.uniform(-1, 1, size=(1, 3, 32, 32)))
        loss = RestorationLoss(LossConfig())
        return ProbeCase(list(net.store.values()), lambda: loss(net(image), clean), scalar=True)

    def coordinates(self, case, rng):
        picked = rng.choice(len(case.inputs), size=min(self.samples, len(case.inputs)), replace=False)
        return [(int(i), int(rng.integers(case.inputs[i].size))) for i in sorted(picked.tolist())]
