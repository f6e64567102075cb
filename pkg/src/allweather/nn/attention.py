"""Multi-head attention with reduction-ratio key/value compression.

Keys and values are computed from a compressed copy of the token sequence:
``[B, N, C]`` is viewed as ``[B, N/R, C*R]`` (R consecutive tokens side by
side) and a linear map brings the width back to ``C``. Attention cost drops
from O(N^2) to O(N^2 / R).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from allweather.config.models import ConfigError
from allweather.errors import DimensionError
from allweather.nn.layers import Linear
from allweather.nn.params import ParameterScope
from allweather.tensor import Tensor, matmul, mul, no_grad, reshape, softmax, transpose


@dataclass(frozen=True)
class AttentionConfig:
    embed_dim: int
    num_heads: int = 1
    reduction_ratio: int = 1

    def __post_init__(self) -> None:
        if self.embed_dim < 1 or self.num_heads < 1:
            raise ConfigError("attention needs embed_dim >= 1 and num_heads >= 1")
        if self.embed_dim % self.num_heads:
            raise ConfigError(
                f"embed dim {self.embed_dim} is not divisible by {self.num_heads} heads"
            )
        if self.reduction_ratio < 1:
            raise ConfigError(f"reduction ratio must be >= 1, got {self.reduction_ratio}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def scale(self) -> float:
        return 1.0 / float(np.sqrt(self.head_dim))

    def check_tokens(self, num_tokens: int, where: str = "attention") -> None:
        if num_tokens % self.reduction_ratio:
            raise ConfigError(
                f"{where}: token count {num_tokens} is not divisible by "
                f"reduction ratio {self.reduction_ratio}"
            )


class Attention:
    """Self- and cross-attention sharing one parameter set.

    Q/K/V projections carry no bias; the recovery map and the output
    projection do. The recovery map starts as token averaging, which is the
    identity when R = 1.
    """

    def __init__(self, scope: ParameterScope, cfg: AttentionConfig):
        self.cfg = cfg
        c, r = cfg.embed_dim, cfg.reduction_ratio
        self.q = Linear(scope.scope("q"), c, c, bias=False)
        self.k = Linear(scope.scope("k"), c, c, bias=False)
        self.v = Linear(scope.scope("v"), c, c, bias=False)
        averaging = np.zeros((c * r, c))
        for offset in range(r):
            averaging[offset * c : (offset + 1) * c] = np.eye(c) / r
        self.recover_weight = scope.add("recover.weight", averaging)
        self.recover_bias = scope.zeros("recover.bias", (c,))
        self.proj = Linear(scope.scope("proj"), c, c)

    def compress(self, x: Tensor) -> Tensor:
        """``[B, N, C]`` -> ``[B, N/R, C]``."""
        b, n, c = x.shape
        r = self.cfg.reduction_ratio
        self.cfg.check_tokens(n)
        grouped = reshape(x, (b, n // r, c * r))
        return matmul(grouped, self.recover_weight) + self.recover_bias

    def _heads(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        h, d = self.cfg.num_heads, self.cfg.head_dim
        return transpose(reshape(x, (b, n, h, d)), (0, 2, 1, 3))

    def _scores(self, q_in: Tensor, kv_in: Tensor) -> tuple[Tensor, Tensor]:
        c = self.cfg.embed_dim
        if q_in.shape[-1] != c or kv_in.shape[-1] != c:
            raise DimensionError(
                f"attention with embed dim {c} got queries {q_in.shape} and keys {kv_in.shape}"
            )
        compressed = self.compress(kv_in)
        q = self._heads(self.q(q_in))
        k = self._heads(self.k(compressed))
        v = self._heads(self.v(compressed))
        weights = softmax(mul(matmul(q, transpose(k, (0, 1, 3, 2))), self.cfg.scale), axis=-1)
        return weights, v

    def attend(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        weights, v = self._scores(q_in, kv_in)
        out = matmul(weights, v)  # [B, h, Nq, d]
        b, _, nq, _ = out.shape
        merged = reshape(transpose(out, (0, 2, 1, 3)), (b, nq, self.cfg.embed_dim))
        return self.proj(merged)

    def self_attention(self, x: Tensor) -> Tensor:
        """``[B, N, C]`` -> ``[B, N, C]``; queries at full length, keys at N/R."""
        return self.attend(x, x)

    def cross_attention(self, q_in: Tensor, kv_in: Tensor) -> Tensor:
        """``[B, Kq, C]`` attending over ``[B, N, C]`` -> ``[B, Kq, C]``."""
        return self.attend(q_in, kv_in)

    __call__ = self_attention

    def attention_weights(self, q_in: Tensor, kv_in: Tensor | None = None) -> np.ndarray:
        """Post-softmax weights ``[B, h, Nq, N/R]``, computed without recording."""
        with no_grad():
            weights, _ = self._scores(q_in, q_in if kv_in is None else kv_in)
        return weights.data
