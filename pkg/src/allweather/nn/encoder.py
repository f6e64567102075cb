"""Hierarchical transformer encoder with intra-patch side branches."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from allweather.config.models import ConfigError, NetworkConfig
from allweather.errors import ContractError, DimensionError
from allweather.nn.attention import Attention, AttentionConfig
from allweather.nn.layers import Conv2d, LayerNorm, Linear, to_spatial, to_tokens
from allweather.nn.params import ParameterScope
from allweather.tensor import Tensor, concat, gelu, getitem

logger = logging.getLogger(__name__)


@dataclass
class FeaturePyramid:
    """Stage outputs ``[B, C_i, H_i, W_i]``, shallowest first."""

    levels: list[Tensor]

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, index: int) -> Tensor:
        return self.levels[index]

    @property
    def last(self) -> Tensor:
        return self.levels[-1]

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [level.shape for level in self.levels]


class PatchMerge:
    """Overlapped patch merging: strided conv (kernel > stride), then channel layernorm."""

    def __init__(
        self, scope: ParameterScope, in_channels: int, out_channels: int, kernel: int, stride: int
    ):
        if kernel <= stride:
            raise ConfigError(f"patch merge kernel {kernel} must exceed stride {stride}")
        self.stride = stride
        padding = (kernel - 1) // 2
        self.proj = Conv2d(scope.scope("proj"), in_channels, out_channels, kernel, stride, padding)
        self.norm = LayerNorm(scope.scope("norm"), out_channels)

    def __call__(self, x: Tensor) -> tuple[Tensor, int, int]:
        """Return ``(tokens [B, N, C_out], H/s, W/s)``."""
        _, _, h, w = x.shape
        if h % self.stride or w % self.stride:
            raise ConfigError(f"patch merge: spatial {(h, w)} not divisible by stride {self.stride}")
        y = self.proj(x)
        _, _, oh, ow = y.shape
        return self.norm(to_tokens(y)), oh, ow

    def spatial(self, x: Tensor) -> Tensor:
        tokens, h, w = self(x)
        return to_spatial(tokens, h, w)


class TransformerBlock:
    """Pre-norm block: attention residual, then the depth-wise conv feed-forward."""

    def __init__(
        self, scope: ParameterScope, dim: int, heads: int, reduction_ratio: int, mlp_ratio: int = 4
    ):
        hidden = dim * mlp_ratio
        self.attn_cfg = AttentionConfig(dim, heads, reduction_ratio)
        self.norm1 = LayerNorm(scope.scope("norm1"), dim)
        self.attn = Attention(scope.scope("attn"), self.attn_cfg)
        self.norm2 = LayerNorm(scope.scope("norm2"), dim)
        self.fc1 = Linear(scope.scope("fc1"), dim, hidden)
        self.dwc = Conv2d(scope.scope("dwc"), hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = Linear(scope.scope("fc2"), hidden, dim)

    def ffn(self, x: Tensor, h: int, w: int) -> Tensor:
        """``x + fc2(gelu(dwc(fc1(norm2(x)))))`` with the conv on the ``h×w`` grid."""
        if x.shape[1] != h * w:
            raise ContractError(f"{x.shape[1]} tokens do not form a {h}x{w} grid")
        hidden = self.fc1(self.norm2(x))
        hidden = to_tokens(self.dwc(to_spatial(hidden, h, w)))
        return x + self.fc2(gelu(hidden))

    def __call__(self, x: Tensor, h: int, w: int) -> Tensor:
        return self.ffn(x + self.attn(self.norm1(x)), h, w)


def split_quadrants(x: Tensor) -> Tensor:
    """``[B, C, H, W]`` -> ``[4B, C, H/2, W/2]``, quadrant-major (TL, TR, BL, BR)."""
    _, _, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"intra-patch split needs even spatial dims, got {(h, w)}")
    hh, hw = h // 2, w // 2
    parts = [
        getitem(x, (slice(None), slice(None), slice(r * hh, (r + 1) * hh), slice(c * hw, (c + 1) * hw)))
        for r in (0, 1)
        for c in (0, 1)
    ]
    return concat(parts, axis=0)


def merge_quadrants(x: Tensor) -> Tensor:
    """Inverse of :func:`split_quadrants`."""
    b4 = x.shape[0]
    b = b4 // 4
    quads = [getitem(x, slice(i * b, (i + 1) * b)) for i in range(4)]
    top = concat(quads[:2], axis=3)
    bottom = concat(quads[2:], axis=3)
    return concat([top, bottom], axis=2)


class IntraPatchBranch:
    """One transformer block applied to each 2×2 sub-map of the stage input.

    The block parameters are shared across the four sub-maps, which are
    stacked along the batch axis. At the first stage the split happens on the
    raw image and a dedicated patch merge embeds each sub-map.
    """

    def __init__(
        self,
        scope: ParameterScope,
        dim: int,
        heads: int,
        reduction_ratio: int,
        mlp_ratio: int,
        embed: tuple[int, int, int] | None = None,
    ):
        self.embed = None
        if embed is not None:
            in_channels, kernel, stride = embed
            self.embed = PatchMerge(scope.scope("embed"), in_channels, dim, kernel, stride)
        self.block = TransformerBlock(scope.scope("block"), dim, heads, reduction_ratio, mlp_ratio)
        self.norm = LayerNorm(scope.scope("norm"), dim)

    def __call__(self, x: Tensor) -> Tensor:
        """Spatial stage input -> tokens ``[B, N, C]`` on the stage grid."""
        parts = split_quadrants(x)
        if self.embed is not None:
            tokens, h, w = self.embed(parts)
        else:
            _, _, h, w = parts.shape
            tokens = to_tokens(parts)
        out = merge_quadrants(to_spatial(self.block(tokens, h, w), h, w))
        return self.norm(to_tokens(out))


class Stage:
    def __init__(self, scope: ParameterScope, cfg: NetworkConfig, index: int, in_channels: int):
        dim = cfg.dims[index]
        self.index = index
        self.stride = cfg.strides[index]
        kernel = cfg.merge_kernels[index]
        self.merge = PatchMerge(scope.scope("merge"), in_channels, dim, kernel, self.stride)
        heads, ratio = cfg.heads[index], cfg.reduction_ratios[index]
        self.blocks = [
            TransformerBlock(scope.scope(f"block{j}"), dim, heads, ratio, cfg.mlp_ratio)
            for j in range(cfg.depths[index])
        ]
        self.norm = LayerNorm(scope.scope("norm"), dim)
        self.intra: IntraPatchBranch | None = None
        if cfg.intra_pt:
            embed = (in_channels, cfg.merge_kernels[0], self.stride) if index == 0 else None
            self.intra = IntraPatchBranch(
                scope.scope("intra"), dim, cfg.heads[index], cfg.intra_reduction_ratios[index],
                cfg.mlp_ratio, embed,
            )

    def __call__(self, x: Tensor) -> Tensor:
        tokens, h, w = self.merge(x)
        main = tokens
        for block in self.blocks:
            main = block(main, h, w)
        out = self.norm(main)
        if self.intra is not None:
            # stage 1 splits the raw image, later stages the merged tokens
            source = x if self.intra.embed is not None else to_spatial(tokens, h, w)
            out = out + self.intra(source)
        return to_spatial(out, h, w)


class Encoder:
    """Four-stage pyramid encoder (or the single-scale baseline).

    ``Y_i = LN_i(blocks_i(X_i)) + IntraPT_i(X_i)`` where ``X_i`` is the merged
    input of stage ``i``.
    """

    def __init__(self, scope: ParameterScope, cfg: NetworkConfig, in_channels: int = 3):
        self.cfg = cfg
        self.stages: list[Stage] = []
        self.base: Stage | None = None
        if cfg.hierarchical:
            channels = in_channels
            for i in range(4):
                self.stages.append(Stage(scope.scope(f"stage{i + 1}"), cfg, i, channels))
                channels = cfg.dims[i]
        else:
            self.base = _BaseStage(scope.scope("base"), cfg, in_channels)

    def grids(self, height: int, width: int) -> list[tuple[int, int]]:
        if not self.cfg.hierarchical:
            s = self.cfg.total_stride
            return [(height // s, width // s)]
        grids, h, w = [], height, width
        for s in self.cfg.strides:
            h, w = h // s, w // s
            grids.append((h, w))
        return grids

    def required_divisor(self) -> int:
        divisor = self.cfg.total_stride
        return divisor * 2 if self.cfg.intra_pt else divisor

    def validate(self, height: int, width: int) -> None:
        """Raise :class:`ConfigError` unless an ``height×width`` input fits every stage."""
        cfg = self.cfg
        divisor = self.required_divisor()
        if height % divisor or width % divisor:
            raise ConfigError(
                f"input {height}x{width} must be divisible by {divisor} for this network"
            )
        if not cfg.hierarchical:
            h, w = self.grids(height, width)[0]
            AttentionConfig(cfg.dims[-1], cfg.heads[-1], cfg.reduction_ratios[-1]).check_tokens(
                h * w, "baseline stage"
            )
            return
        for i, (h, w) in enumerate(self.grids(height, width)):
            stage = f"stage {i + 1}"
            if cfg.depths[i]:
                attn = AttentionConfig(cfg.dims[i], cfg.heads[i], cfg.reduction_ratios[i])
                attn.check_tokens(h * w, stage)
            if cfg.intra_pt:
                AttentionConfig(cfg.dims[i], cfg.heads[i], cfg.intra_reduction_ratios[i]).check_tokens(
                    (h // 2) * (w // 2), f"{stage} intra-patch branch"
                )

    def __call__(self, image: Tensor) -> FeaturePyramid:
        if image.ndim != 4:
            raise DimensionError(f"encoder expects [B, C, H, W], got {image.shape}")
        self.validate(image.shape[2], image.shape[3])
        if self.base is not None:
            return FeaturePyramid([self.base(image)])
        levels, x = [], image
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        logger.debug("Encoded %s -> %s", image.shape, [lv.shape for lv in levels])
        return FeaturePyramid(levels)


class _BaseStage(Stage):
    """Single patch embedding to the deepest resolution (kernel ∏s+1, stride ∏s)."""

    def __init__(self, scope: ParameterScope, cfg: NetworkConfig, in_channels: int):
        dim = cfg.dims[-1]
        stride = cfg.total_stride
        self.index = 3
        self.stride = stride
        self.merge = PatchMerge(scope.scope("merge"), in_channels, dim, stride + 1, stride)
        self.blocks = [
            TransformerBlock(
                scope.scope(f"block{j}"), dim, cfg.heads[-1], cfg.reduction_ratios[-1], cfg.mlp_ratio
            )
            for j in range(cfg.depths[-1])
        ]
        self.norm = LayerNorm(scope.scope("norm"), dim)
        self.intra = None

