"""Tests for finite-difference gradient verification."""

import math

import numpy as np
import pytest

from allweather.errors import InputError
from allweather.gradcheck import (
    OP_TOLERANCE,
    PROBE_CLASSES,
    PROBES,
    Probe,
    ProbeCase,
    ProbeResult,
    relative_error,
    run_probes,
)
from allweather.gradcheck.base import ABS_TOLERANCE, absolute_error, leaf
from allweather.tensor import Function, Tensor

FAST_PROBES = [name for name in PROBES if name != "network"]


class BrokenSquare(Function):
    """x**2 with the factor 2 dropped from its derivative."""

    name = "broken_square"

    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        return (grad * self.a,)


class BrokenSquareProbe(Probe):
    name = "broken_square"

    def build(self, rng):
        a = leaf(rng, (4,), 0.5, 1.5)
        return ProbeCase([a], lambda: BrokenSquare.apply(a))


class SkewedSquare(Function):
    """x**2 whose derivative is doubled on the last element only."""

    name = "skewed_square"

    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        local = 2 * self.a
        local[-1] *= 2
        return (grad * local,)


class SkewedSquareProbe(Probe):
    name = "skewed_square"

    def build(self, rng):
        # the wrong coordinate is three orders of magnitude below the others
        a = Tensor(np.array([1.0, -1.0, 1.0, 1e-3]), requires_grad=True)
        return ProbeCase([a], lambda: SkewedSquare.apply(a))


class TestRegistry:
    """Probe names and lookup."""

    def test_names_unique_and_nonempty(self):
        names = [cls.name for cls in PROBE_CLASSES]

        assert all(names)
        assert len(names) == len(set(names)) == len(PROBES)

    def test_unknown_probe(self):
        with pytest.raises(InputError, match="unknown probe"):
            run_probes(["nope"])

    def test_run_selected(self):
        results = run_probes(["mul", "add"])

        # registry order, not request order
        assert [r.name for r in results] == ["add", "mul"]


class TestProbes:
    """Every backward rule agrees with central differences."""

    @pytest.mark.parametrize("name", FAST_PROBES)
    def test_probe_passes(self, name):
        result = PROBES[name]().run()

        assert result.coords > 0
        assert result.passed, result.to_line()

    @pytest.mark.slow
    def test_network_probe_passes(self):
        result = PROBES["network"]().run()

        assert result.passed, result.to_line()

    def test_broken_backward_is_caught(self):
        """Test that a derivative off by a factor of two fails the probe."""
        result = BrokenSquareProbe().run()

        assert not result.passed
        assert result.max_rel_error == pytest.approx(0.5, abs=0.05)

    def test_wrong_small_coordinate_is_caught(self):
        """Test that an error on one small gradient entry is not hidden by the large ones."""
        result = SkewedSquareProbe().run()

        assert not result.passed
        assert result.max_rel_error == pytest.approx(0.5)

    def test_deterministic_for_seed(self):
        first = PROBES["layernorm"](seed=4).run()
        second = PROBES["layernorm"](seed=4).run()

        assert first == second


class TestProbeResult:
    """Pass/fail decision and report line."""

    def test_to_line(self):
        line = ProbeResult("add", 1.5e-7, OP_TOLERANCE, 12).to_line()

        assert line == "add\t1.500e-07\t0.001\t12\tok"

    def test_failure_line(self):
        result = ProbeResult("div", 0.2, OP_TOLERANCE, 12)

        assert not result.passed
        assert result.to_line().endswith("FAIL")

    def test_nan_error_fails(self):
        assert not ProbeResult("tanh", math.nan, OP_TOLERANCE, 3).passed


class TestRelativeError:
    """Per-coordinate relative error with an absolute floor near zero."""

    def test_identical(self):
        assert relative_error(np.array([1.0, -2.0]), np.array([1.0, -2.0])) == 0.0

    def test_scaled_per_coordinate(self):
        error = relative_error(np.array([1.0, 4.0]), np.array([1.0, 3.0]))

        assert error == pytest.approx(0.25)

    def test_small_coordinate_not_masked(self):
        error = relative_error(np.array([1.0, 1e-3]), np.array([1.0, 2e-3]))

        assert error == pytest.approx(0.5)

    def test_near_zero_entries_compared_absolutely(self):
        analytic, numeric = np.array([1.0, 1e-8]), np.array([1.0, 5e-7])

        assert relative_error(analytic, numeric) == 0.0
        assert absolute_error(analytic, numeric) == pytest.approx(4.9e-7)
        assert absolute_error(analytic, numeric) <= ABS_TOLERANCE

    def test_missed_gradient_fails_absolute_check(self):
        result = ProbeResult(
            "tanh", 0.0, OP_TOLERANCE, 2, absolute_error(np.array([0.0]), np.array([0.3]))
        )

        assert not result.passed

    def test_all_zero(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
