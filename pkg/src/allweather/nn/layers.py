"""Parameterized building blocks shared by the encoder, decoder and tail."""

from __future__ import annotations

from allweather.nn.params import ParameterScope
from allweather.tensor import Tensor, conv2d, layernorm, linear, reshape, transpose


class Linear:
    """Position-wise affine map over the last axis; weight stored ``[in, out]``."""

    def __init__(self, scope: ParameterScope, in_features: int, out_features: int, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = scope.trunc_normal("weight", (in_features, out_features))
        self.bias = scope.zeros("bias", (out_features,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, scope: ParameterScope, dim: int, eps: float = 1e-6):
        self.eps = eps
        self.gamma = scope.ones("gamma", (dim,))
        self.beta = scope.zeros("beta", (dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm(x, self.gamma, self.beta, self.eps)


class Conv2d:
    def __init__(
        self,
        scope: ParameterScope,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        groups: int = 1,
    ):
        self.stride = stride
        self.padding = padding
        self.groups = groups
        self.weight = scope.fan_in_uniform(
            "weight", (out_channels, in_channels // groups, kernel, kernel)
        )
        self.bias = scope.zeros("bias", (out_channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


def to_tokens(x: Tensor) -> Tensor:
    """``[B, C, H, W]`` -> ``[B, H*W, C]``."""
    b, c, h, w = x.shape
    return transpose(reshape(x, (b, c, h * w)), (0, 2, 1))


def to_spatial(tokens: Tensor, height: int, width: int) -> Tensor:
    """``[B, H*W, C]`` -> ``[B, C, H, W]``; inverse of :func:`to_tokens`."""
    b, n, c = tokens.shape
    return reshape(transpose(tokens, (0, 2, 1)), (b, c, height, width))
