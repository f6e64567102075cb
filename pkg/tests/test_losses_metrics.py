"""Tests for the training objective and the image quality metrics."""

import math

import numpy as np
import pytest

from allweather.config import LossConfig
from allweather.errors import DimensionError, InputError
from allweather.losses import FeatureExtractor, RestorationLoss, feature_loss, smooth_l1, total_loss
from allweather.metrics import format_metrics, format_value, psnr, ssim
from allweather.tensor import Tensor, backward
from allweather.weather import generate_scene


def images(seed: int, size: int = 32) -> Tensor:
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, size=(2, 3, size, size)))


class TestSmoothL1:
    """Quadratic inside |E| < 1, linear outside."""

    def test_quadratic_branch(self):
        loss = smooth_l1(Tensor(np.full((2, 2), 0.5)), Tensor(np.zeros((2, 2))))

        assert loss.item() == pytest.approx(0.125)

    def test_linear_branch(self):
        loss = smooth_l1(Tensor(np.full((3,), 2.0)), Tensor(np.zeros(3)))

        assert loss.item() == pytest.approx(1.5)

    def test_gradient(self):
        """Test E/n inside the quadratic region and sign(E)/n outside."""
        pred = Tensor([0.5, -3.0, 2.0, 0.0], requires_grad=True)

        backward(smooth_l1(pred, Tensor(np.zeros(4))))

        np.testing.assert_allclose(pred.grad, [0.125, -0.25, 0.25, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError, match="smooth_l1"):
            smooth_l1(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


class TestRestorationLoss:
    """Smooth L1 plus the weighted frozen-feature term."""

    def test_zero_for_identical_images(self):
        x = images(0)

        assert total_loss(x, x).item() == 0.0

    def test_lambda_zero_is_plain_smooth_l1(self):
        pred, gt = images(1), images(2)

        loss = RestorationLoss(LossConfig(lambda_perceptual=0.0))(pred, gt)

        assert loss.item() == smooth_l1(pred, gt).item()

    def test_weighted_sum(self):
        cfg = LossConfig(lambda_perceptual=0.5)
        pred, gt = images(1), images(2)

        loss = RestorationLoss(cfg)(pred, gt).item()

        features = feature_loss(pred, gt, FeatureExtractor(cfg)).item()
        expected = smooth_l1(pred, gt).item() + 0.5 * features
        assert loss == pytest.approx(expected, rel=1e-6)

    def test_feature_term_is_positive(self):
        pred, gt = images(3), images(4)

        assert feature_loss(pred, gt, FeatureExtractor(LossConfig())).item() > 0.0

    def test_extractor_is_frozen(self):
        """Test that the feature extractor never receives gradients."""
        extractor = FeatureExtractor(LossConfig())
        pred = Tensor(images(5).data, requires_grad=True)

        backward(feature_loss(pred, images(6), extractor))

        assert pred.grad is not None
        assert all(t.grad is None and not t.requires_grad for t in extractor.store.values())

    def test_extractor_taps(self):
        extractor = FeatureExtractor(LossConfig(feature_channels=[4, 6, 8], feature_taps=[1, 3]))

        features = extractor(images(0, size=16))

        assert [f.shape for f in features] == [(2, 4, 8, 8), (2, 8, 2, 2)]


class TestPSNR:
    """Peak signal-to-noise ratio."""

    def test_identical_is_infinite(self):
        a = np.random.default_rng(0).random((3, 8, 8))

        assert psnr(a, a) == math.inf

    def test_one_level_difference(self):
        """Test a uniform 1/255 offset gives 20*log10(255) dB."""
        a = np.full((3, 16, 16), 0.5)

        assert psnr(a, a + 1 / 255) == pytest.approx(48.13, abs=0.01)

    def test_monotone_in_noise(self):
        clean = generate_scene(0, 32).image
        noise = np.random.default_rng(1).normal(size=clean.shape)

        values = [psnr(clean + sigma * noise, clean) for sigma in (0.01, 0.05, 0.1, 0.3)]

        assert values == sorted(values, reverse=True)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError, match="psnr"):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSSIM:
    """Structural similarity."""

    def test_identical_is_one(self):
        a = generate_scene(1, 32).image

        assert ssim(a, a) == pytest.approx(1.0)

    def test_symmetric(self):
        a, b = generate_scene(2, 32).image, generate_scene(3, 32).image

        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_inverted_image_is_dissimilar(self):
        a = generate_scene(4, 32, "checker").image

        assert ssim(a, 1.0 - a) < 0.5

    def test_too_small(self):
        with pytest.raises(InputError, match="at least 11x11"):
            ssim(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)))

    def test_matches_reference_implementation(self):
        """Test agreement with scikit-image's Gaussian-window SSIM on ten pairs."""
        metrics = pytest.importorskip("skimage.metrics")
        rng = np.random.default_rng(0)
        for i in range(10):
            clean = generate_scene(i, 32).image
            noisy = np.clip(clean + rng.normal(0, 0.1, size=clean.shape), 0, 1)
            expected = metrics.structural_similarity(
                clean.mean(axis=0),
                noisy.mean(axis=0),
                data_range=1.0,
                gaussian_weights=True,
                sigma=1.5,
                use_sample_covariance=False,
            )

            assert ssim(noisy, clean) == pytest.approx(expected, abs=1e-3)


class TestFormatting:
    """name<TAB>value output lines."""

    def test_format_value(self):
        assert format_value(math.inf) == "inf"
        assert format_value(31.41592) == "31.4159"
        assert format_value(math.nan) == "nan"

    def test_format_metrics(self):
        text = format_metrics({"snow/psnr_degraded": 20.0, "overall/ssim_degraded": 1.0})

        assert text == "snow/psnr_degraded\t20.0000\noverall/ssim_degraded\t1.0000"
