"""End-to-end restoration network and its analytic parameter count."""

from __future__ import annotations

import logging

import numpy as np

from allweather.config.models import NetworkConfig
from allweather.errors import DimensionError, InputError
from allweather.nn.decoder import ProjectionTail, TaskFusion, WeatherDecoder
from allweather.nn.encoder import Encoder, FeaturePyramid
from allweather.nn.params import ParameterStore
from allweather.tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


class RestorationNet:
    """Single weather-agnostic model: encode, decode queries, fuse, project.

    Inputs and outputs live in [-1, 1]; use :func:`restore_image` for
    [0, 1] images.
    """

    def __init__(self, cfg: NetworkConfig | None = None, seed: int = 0):
        self.cfg = cfg or NetworkConfig()
        self.store = ParameterStore(seed)
        root = self.store.scope("")
        self.encoder = Encoder(root.scope("encoder"), self.cfg)
        self.decoder: WeatherDecoder | None = None
        self.fusion: TaskFusion | None = None
        if self.cfg.weather_queries:
            self.decoder = WeatherDecoder(root.scope("decoder"), self.cfg)
            self.fusion = TaskFusion(root.scope("fusion"), self.cfg, pyramid_dims(self.cfg))
        self.tail = ProjectionTail(root.scope("tail"), self.cfg)
        logger.debug("Built network with %d parameters", self.store.num_params())

    @property
    def num_queries(self) -> int:
        return self.cfg.num_queries if self.decoder is not None else 0

    def validate(self, height: int, width: int) -> None:
        self.encoder.validate(height, width)

    def encode(self, image: Tensor) -> FeaturePyramid:
        if image.ndim != 4 or image.shape[1] != 3:
            raise DimensionError(f"expected an image batch [B, 3, H, W], got {image.shape}")
        return self.encoder(image)

    def forward(self, image: Tensor) -> Tensor:
        """Restore a batch ``[B, 3, H, W]`` in [-1, 1]; output has the same shape."""
        pyramid = self.encode(image)
        if self.decoder is not None and self.fusion is not None:
            pyramid = self.fusion(pyramid, self.decoder(pyramid))
        return self.tail(pyramid)

    __call__ = forward

    def attention_maps(self, image: Tensor) -> np.ndarray:
        """Per-query attention over the deepest grid: ``[B, Kq, H_last, W_last]``."""
        if self.decoder is None:
            raise InputError("network has no weather-query decoder (weather_queries is off)")
        with no_grad():
            pyramid = self.encode(image)
            weights = self.decoder.attention_maps(pyramid)
        _, _, h, w = pyramid.last.shape
        return weights.reshape(weights.shape[0], weights.shape[1], h, w)


def to_network_range(image: np.ndarray) -> np.ndarray:
    return image * 2.0 - 1.0


def from_network_range(image: np.ndarray) -> np.ndarray:
    return (image + 1.0) / 2.0


def restore_image(net: RestorationNet, image: np.ndarray) -> np.ndarray:
    """Restore ``[3, H, W]`` or ``[B, 3, H, W]`` images given in [0, 1]."""
    batch = image[None] if image.ndim == 3 else image
    with no_grad():
        out = net(Tensor(to_network_range(np.asarray(batch, dtype=np.float32))))
    restored = from_network_range(out.data).astype(np.float32)
    return restored[0] if image.ndim == 3 else restored


def pyramid_dims(cfg: NetworkConfig) -> list[int]:
    return list(cfg.dims) if cfg.hierarchical else [cfg.dims[-1]]


# Analytic parameter count, summed from layer shapes without building anything.


def _linear(n_in: int, n_out: int, bias: bool = True) -> int:
    return n_in * n_out + (n_out if bias else 0)


def _conv(n_in: int, n_out: int, kernel: int, groups: int = 1) -> int:
    return n_out * (n_in // groups) * kernel * kernel + n_out


def _norm(dim: int) -> int:
    return 2 * dim


def _attention(dim: int, ratio: int) -> int:
    return 3 * _linear(dim, dim, bias=False) + _linear(dim * ratio, dim) + _linear(dim, dim)


def _block(dim: int, ratio: int, mlp_ratio: int) -> int:
    hidden = dim * mlp_ratio
    return (
        2 * _norm(dim)
        + _attention(dim, ratio)
        + _linear(dim, hidden)
        + _conv(hidden, hidden, 3, groups=hidden)
        + _linear(hidden, dim)
    )


def _merge(n_in: int, n_out: int, kernel: int) -> int:
    return _conv(n_in, n_out, kernel) + _norm(n_out)


def count_parameters(cfg: NetworkConfig, in_channels: int = 3) -> int:
    """Number of trainable scalars :class:`RestorationNet` registers for ``cfg``."""
    total = 0
    if cfg.hierarchical:
        channels = in_channels
        for i, dim in enumerate(cfg.dims):
            total += _merge(channels, dim, cfg.merge_kernels[i])
            total += cfg.depths[i] * _block(dim, cfg.reduction_ratios[i], cfg.mlp_ratio)
            total += _norm(dim)
            if cfg.intra_pt:
                if i == 0:
                    total += _merge(in_channels, dim, cfg.merge_kernels[0])
                total += _block(dim, cfg.intra_reduction_ratios[i], cfg.mlp_ratio) + _norm(dim)
            channels = dim
    else:
        dim = cfg.dims[-1]
        total += _merge(in_channels, dim, cfg.total_stride + 1)
        total += cfg.depths[-1] * _block(dim, cfg.reduction_ratios[-1], cfg.mlp_ratio)
        total += _norm(dim)

    if cfg.weather_queries:
        dim = cfg.dims[-1]
        hidden = dim * cfg.mlp_ratio
        total += cfg.num_queries * dim
        total += cfg.decoder_depth * (
            3 * _norm(dim) + _attention(dim, 1) + _linear(dim, hidden) + _linear(hidden, dim)
        )
        total += sum(_linear(dim, d) for d in pyramid_dims(cfg))

    widths = [cfg.dims[3], cfg.dims[2], cfg.dims[1], cfg.dims[0], 3]
    skips = [cfg.dims[2], cfg.dims[1], cfg.dims[0], 0] if cfg.hierarchical else [0, 0, 0, 0]
    total += sum(_conv(widths[i] + skips[i], widths[i + 1], 3) for i in range(4))
    return total
