"""Weather-query decoder, task-feature fusion and the convolutional tail."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from allweather.config.models import NetworkConfig
from allweather.errors import ContractError
from allweather.nn.attention import Attention, AttentionConfig
from allweather.nn.encoder import FeaturePyramid
from allweather.nn.layers import Conv2d, LayerNorm, Linear, to_tokens
from allweather.nn.params import ParameterScope
from allweather.tensor import Tensor, concat, gelu, mean, reshape, tanh, upsample_nearest


@dataclass
class TaskFeature:
    decoded: Tensor  # [B, Kq, C]
    pooled: Tensor  # [B, C], mean over queries


class DecoderBlock:
    """Queries cross-attend to the deepest encoder tokens, then a plain MLP."""

    def __init__(self, scope: ParameterScope, dim: int, heads: int, mlp_ratio: int):
        self.norm_q = LayerNorm(scope.scope("norm_q"), dim)
        self.norm_kv = LayerNorm(scope.scope("norm_kv"), dim)
        self.attn = Attention(scope.scope("attn"), AttentionConfig(dim, heads, 1))
        self.norm_mlp = LayerNorm(scope.scope("norm_mlp"), dim)
        self.fc1 = Linear(scope.scope("fc1"), dim, dim * mlp_ratio)
        self.fc2 = Linear(scope.scope("fc2"), dim * mlp_ratio, dim)

    def __call__(self, queries: Tensor, tokens: Tensor) -> Tensor:
        x = queries + self.attn.cross_attention(self.norm_q(queries), self.norm_kv(tokens))
        return x + self.fc2(gelu(self.fc1(self.norm_mlp(x))))

    def weights(self, queries: Tensor, tokens: Tensor) -> np.ndarray:
        return self.attn.attention_weights(self.norm_q(queries), self.norm_kv(tokens))


class WeatherDecoder:
    """Learnable weather-type queries decoded against the last encoder stage."""

    def __init__(self, scope: ParameterScope, cfg: NetworkConfig):
        dim = cfg.dims[-1]
        self.num_queries = cfg.num_queries
        self.queries = scope.trunc_normal("queries", (cfg.num_queries, dim))
        self.blocks = [
            DecoderBlock(scope.scope(f"block{j}"), dim, cfg.heads[-1], cfg.mlp_ratio)
            for j in range(cfg.decoder_depth)
        ]

    def __call__(self, pyramid: FeaturePyramid) -> TaskFeature:
        tokens = to_tokens(pyramid.last)
        x = reshape(self.queries, (1, *self.queries.shape))
        for block in self.blocks:
            x = block(x, tokens)
        return TaskFeature(decoded=x, pooled=mean(x, axis=1))

    def attention_maps(self, pyramid: FeaturePyramid) -> np.ndarray:
        """Last-block cross-attention averaged over heads: ``[B, Kq, N_last]``."""
        tokens = to_tokens(pyramid.last)
        x = reshape(self.queries, (1, *self.queries.shape))
        for block in self.blocks[:-1]:
            x = block(x, tokens)
        weights = self.blocks[-1].weights(x, tokens)
        return weights.mean(axis=1)


class TaskFusion:
    """Per-stage linear map of the pooled task vector, broadcast-added over the grid."""

    def __init__(self, scope: ParameterScope, cfg: NetworkConfig, stage_dims: list[int]):
        self.maps = [
            Linear(scope.scope(f"stage{i + 1}"), cfg.dims[-1], dim) for i, dim in enumerate(stage_dims)
        ]

    def __call__(self, pyramid: FeaturePyramid, task: TaskFeature) -> FeaturePyramid:
        fused = []
        for level, proj in zip(pyramid.levels, self.maps):
            b, c, _, _ = level.shape
            fused.append(level + reshape(proj(task.pooled), (b, c, 1, 1)))
        return FeaturePyramid(fused)


class ProjectionTail:
    """Four upsample + 3×3 conv layers back to full resolution.

    Layer ``l`` upsamples ×2, concatenates the encoder feature of matching
    resolution (deepest first; the last layer has none), and convolves. GELU
    sits between layers and tanh after the last, so outputs lie in (-1, 1).
    """

    def __init__(self, scope: ParameterScope, cfg: NetworkConfig, out_channels: int = 3):
        self.use_skips = cfg.hierarchical
        widths = [cfg.dims[-1], cfg.dims[2], cfg.dims[1], cfg.dims[0], out_channels]
        self.skip_channels = [cfg.dims[2], cfg.dims[1], cfg.dims[0], 0] if self.use_skips else [0] * 4
        self.factors = list(reversed(cfg.strides))
        self.convs = [
            Conv2d(
                scope.scope(f"conv{i + 1}"),
                widths[i] + self.skip_channels[i],
                widths[i + 1],
                3,
                padding=1,
            )
            for i in range(4)
        ]

    def __call__(self, pyramid: FeaturePyramid) -> Tensor:
        x = pyramid.last
        skips = list(reversed(pyramid.levels[:-1])) if self.use_skips else []
        for i, conv in enumerate(self.convs):
            x = upsample_nearest(x, self.factors[i])
            if i < len(skips):
                skip = skips[i]
                if skip.shape[2:] != x.shape[2:]:
                    raise ContractError(
                        f"tail layer {i + 1}: skip {skip.shape[2:]} does not match {x.shape[2:]}"
                    )
                x = concat([x, skip], axis=1)
            x = conv(x)
            x = tanh(x) if i == len(self.convs) - 1 else gelu(x)
        return x
