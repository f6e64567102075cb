"""Tests for the encoder, decoder, tail and the assembled network."""

import numpy as np
import pytest

from allweather.config import ABLATIONS, KINDS, ConfigError, NetworkConfig
from allweather.errors import DimensionError, InputError
from allweather.nn import ParameterStore, RestorationNet, count_parameters, restore_image
from allweather.nn.encoder import TransformerBlock, merge_quadrants, split_quadrants
from allweather.nn.layers import Linear
from allweather.nn.network import to_network_range
from allweather.tensor import Tensor, no_grad
from allweather.weather import generate_scene, synthesize

from .conftest import small_network


def zero(*layers: Linear) -> None:
    for layer in layers:
        layer.weight.data[...] = 0.0
        if layer.bias is not None:
            layer.bias.data[...] = 0.0


def image_batch(size: int, batch: int = 1, seed: int = 0) -> Tensor:
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, size=(batch, 3, size, size)))


class TestShapes:
    """Output and pyramid shapes."""

    @pytest.mark.parametrize("size", [32, 64, 96])
    def test_output_matches_input(self, size):
        """Test that restoration preserves [B, 3, H, W] for valid sizes."""
        net = RestorationNet(small_network(), seed=0)

        with no_grad():
            out = net(image_batch(size, batch=2))

        assert out.shape == (2, 3, size, size)

    def test_pyramid_dims(self):
        """Test stage i output [B, C_i, H/2^i, W/2^i]."""
        cfg = NetworkConfig()
        net = RestorationNet(cfg, seed=0)

        with no_grad():
            pyramid = net.encode(image_batch(64))

        assert pyramid.shapes == [(1, 16, 32, 32), (1, 32, 16, 16), (1, 64, 8, 8), (1, 128, 4, 4)]

    def test_output_in_open_unit_interval(self, small_cfg):
        """Test that the tanh tail keeps outputs inside (-1, 1)."""
        net = RestorationNet(small_cfg, seed=3)

        with no_grad():
            out = net(image_batch(32, seed=9)).data

        assert np.all(np.abs(out) < 1.0)

    def test_single_scale_baseline(self):
        """Test that the baseline encodes straight to the deepest grid."""
        net = RestorationNet(small_network().ablation("base"), seed=0)

        with no_grad():
            pyramid = net.encode(image_batch(32))
            out = net(image_batch(32))

        assert pyramid.shapes == [(1, 16, 2, 2)]
        assert out.shape == (1, 3, 32, 32)

    def test_restore_image_range(self, small_cfg):
        """Test the [0, 1] wrapper for single images."""
        net = RestorationNet(small_cfg, seed=0)
        image = np.random.default_rng(0).random((3, 32, 32)).astype(np.float32)

        restored = restore_image(net, image)

        assert restored.shape == (3, 32, 32)
        assert restored.dtype == np.float32
        assert restored.min() > 0.0 and restored.max() < 1.0


class TestQuadrants:
    """Splitting into 2x2 sub-maps for the intra-patch branch."""

    def test_split_merge_roundtrip(self):
        x = Tensor(np.arange(2 * 3 * 4 * 6, dtype=np.float64).reshape(2, 3, 4, 6))

        parts = split_quadrants(x)

        assert parts.shape == (8, 3, 2, 3)
        np.testing.assert_array_equal(parts.data[2:4], x.data[:, :, :2, 3:])
        np.testing.assert_array_equal(merge_quadrants(parts).data, x.data)

    def test_odd_size_rejected(self):
        with pytest.raises(ConfigError, match="even spatial dims"):
            split_quadrants(Tensor(np.zeros((1, 1, 3, 4))))


class TestParameterCount:
    """Analytic parameter count versus the registered parameters."""

    @pytest.mark.parametrize("ablation", ABLATIONS)
    def test_count_matches_store(self, ablation):
        cfg = NetworkConfig().ablation(ablation)

        net = RestorationNet(cfg, seed=0)

        assert count_parameters(cfg) == net.store.num_params()

    def test_count_matches_store_small(self, small_cfg):
        assert count_parameters(small_cfg) == RestorationNet(small_cfg).store.num_params()

    def test_ladder_strictly_increasing(self):
        """Test base < he < he_intra < full."""
        counts = [count_parameters(NetworkConfig().ablation(name)) for name in ABLATIONS]

        assert counts == sorted(counts)
        assert len(set(counts)) == len(counts)

    def test_unknown_ablation(self):
        with pytest.raises(ConfigError, match="unknown ablation"):
            NetworkConfig().ablation("bigger")


class TestDeterminism:
    """Seeded construction."""

    def test_same_seed_same_params(self, small_cfg):
        a = RestorationNet(small_cfg, seed=11).store.state()
        b = RestorationNet(small_cfg, seed=11).store.state()

        assert list(a) == list(b)
        assert all(np.array_equal(a[name], b[name]) for name in a)

    def test_different_seed_different_params(self, small_cfg):
        a = RestorationNet(small_cfg, seed=1).store["tail.conv1.weight"].data
        b = RestorationNet(small_cfg, seed=2).store["tail.conv1.weight"].data

        assert not np.array_equal(a, b)


class TestIntraPatchBranch:
    """The intra-patch branch is purely additive."""

    def test_zeroed_branch_matches_network_without_it(self):
        """Test that zeroing every intra-patch parameter gives bit-identical output."""
        off = RestorationNet(small_network(intra_pt=False), seed=4)
        on = RestorationNet(small_network(intra_pt=True), seed=4)
        for name, tensor in on.store.items():
            if ".intra." in name:
                tensor.data[...] = 0.0
            else:
                tensor.data = off.store[name].data.copy()
        x = image_batch(32, batch=2, seed=8)

        with no_grad():
            expected = off(x).data
            actual = on(x).data

        np.testing.assert_array_equal(actual, expected)

    def test_branch_changes_output(self, small_cfg):
        """Test that a live branch contributes something."""
        off = RestorationNet(small_network(intra_pt=False), seed=4)
        on = RestorationNet(small_cfg, seed=4)
        for name, tensor in on.store.items():
            if ".intra." not in name:
                tensor.data = off.store[name].data.copy()
        x = image_batch(32, seed=8)

        with no_grad():
            assert not np.array_equal(on(x).data, off(x).data)


class TestValidation:
    """Inputs the network cannot process."""

    def test_size_not_divisible(self, small_cfg):
        net = RestorationNet(small_cfg)

        with pytest.raises(ConfigError, match="divisible by 32"):
            net(image_batch(48))

    def test_size_divisible_without_intra(self):
        """Test that without intra-patch branches 16 is enough."""
        net = RestorationNet(small_network(intra_pt=False))

        with no_grad():
            assert net(image_batch(48)).shape == (1, 3, 48, 48)

    def test_reduction_ratio_too_large_for_grid(self):
        """Test that a token count indivisible by R is reported with its stage."""
        cfg = small_network(reduction_ratios=[4, 2, 2, 8])

        with pytest.raises(ConfigError, match="stage 4"):
            RestorationNet(cfg).validate(32, 32)

    def test_wrong_channels(self, small_cfg):
        with pytest.raises(DimensionError, match=r"\[B, 3, H, W\]"):
            RestorationNet(small_cfg)(Tensor(np.zeros((1, 4, 32, 32))))

    def test_merge_kernel_must_exceed_stride(self):
        with pytest.raises(ConfigError, match="must exceed stride"):
            NetworkConfig(merge_kernels=[3, 3, 1, 3])


class TestAttentionMaps:
    """Weather-query attention over the deepest grid."""

    def test_shape_and_normalization(self, small_cfg):
        net = RestorationNet(small_cfg, seed=0)

        maps = net.attention_maps(image_batch(32, batch=2))

        assert maps.shape == (2, small_cfg.num_queries, 2, 2)
        np.testing.assert_allclose(maps.sum(axis=(2, 3)), 1.0, rtol=1e-5)

    def test_requires_decoder(self):
        net = RestorationNet(small_network(weather_queries=False))

        with pytest.raises(InputError, match="no weather-query decoder"):
            net.attention_maps(image_batch(32))

    def test_maps_differ_between_kinds(self, small_cfg):
        """Test that the same scene under different weather draws different maps."""
        net = RestorationNet(small_cfg, seed=0)
        scene = generate_scene(2, 32).image
        maps = {}
        for kind in KINDS:
            degraded = synthesize(kind, scene, seed=5, intensity=0.9).degraded
            maps[kind] = net.attention_maps(Tensor(to_network_range(degraded[None])))

        for a, b in [("raindrop", "rain_fog"), ("raindrop", "snow"), ("rain_fog", "snow")]:
            assert np.max(np.abs(maps[a] - maps[b])) > 0


class TestResidualIdentity:
    """Zeroed output layers reduce residual blocks to the identity."""

    def test_transformer_block(self):
        """Test that zero attention and FFN output projections pass tokens through."""
        block = TransformerBlock(ParameterStore(0).scope("block"), 8, 2, 2, mlp_ratio=2)
        zero(block.attn.proj, block.fc2)
        x = Tensor(np.random.default_rng(0).normal(size=(2, 16, 8)))

        with no_grad():
            out = block(x, 4, 4)

        np.testing.assert_array_equal(out.data, x.data)

    def test_dwc_ffn(self):
        block = TransformerBlock(ParameterStore(1).scope("block"), 8, 1, 1, mlp_ratio=2)
        zero(block.fc2)
        x = Tensor(np.random.default_rng(1).normal(size=(1, 16, 8)))

        with no_grad():
            out = block.ffn(x, 4, 4)

        np.testing.assert_array_equal(out.data, x.data)

    def test_decoder_returns_raw_queries(self, small_cfg):
        """Test that zero output projections leave the query embeddings untouched."""
        net = RestorationNet(small_cfg, seed=2)
        for block in net.decoder.blocks:
            zero(block.attn.proj, block.fc2)

        with no_grad():
            task = net.decoder(net.encode(image_batch(32, batch=2)))

        assert task.decoded.shape == (2, small_cfg.num_queries, small_cfg.dims[-1])
        for decoded in task.decoded.data:
            np.testing.assert_array_equal(decoded, net.decoder.queries.data)

    def test_fusion_is_bit_exact_identity(self, small_cfg):
        """Test that zeroed per-stage maps return the encoder pyramid unchanged."""
        net = RestorationNet(small_cfg, seed=3)
        zero(*net.fusion.maps)

        with no_grad():
            pyramid = net.encode(image_batch(32, seed=4))
            fused = net.fusion(pyramid, net.decoder(pyramid))

        for before, after in zip(pyramid.levels, fused.levels):
            np.testing.assert_array_equal(after.data, before.data)
