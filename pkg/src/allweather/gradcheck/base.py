"""Base probe interface for finite-difference gradient verification."""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable

import numpy as np

from allweather.tensor import Graph, Tensor, backward, check_mode, mul, no_grad, sum_

logger = logging.getLogger(__name__)

STEP = 1e-3
OP_TOLERANCE = 1e-3
BLOCK_TOLERANCE = 1e-2

# Coordinates whose analytic gradient is below this are compared absolutely
ABS_FLOOR = 1e-6
ABS_TOLERANCE = 1e-6

# Upper bound on perturbed coordinates per input tensor
MAX_COORDS = 48


@dataclass
class ProbeCase:
    """Tensors to perturb and a closure recomputing the probed output from them.

    When ``scalar`` is set the closure already returns the objective (a loss)
    and no random projection is applied.
    """

    inputs: list[Tensor]
    forward: Callable[[], Tensor]
    scalar: bool = False


@dataclass
class ProbeResult:
    """Outcome of one probe.

    Attributes:
        name: Registry name of the probe
        max_rel_error: Largest ``|analytic - numeric| / max(|analytic|, |numeric|)``
            over the coordinates with ``|analytic| >= ABS_FLOOR``
        tolerance: Pass threshold for ``max_rel_error``
        coords: Number of coordinates compared
        max_abs_error: Largest ``|analytic - numeric|`` over the remaining
            coordinates, held to :data:`ABS_TOLERANCE`
    """

    name: str
    max_rel_error: float
    tolerance: float
    coords: int
    max_abs_error: float = 0.0

    @property
    def passed(self) -> bool:
        return (
            bool(np.isfinite(self.max_rel_error))
            and self.max_rel_error <= self.tolerance
            and bool(np.isfinite(self.max_abs_error))
            and self.max_abs_error <= ABS_TOLERANCE
        )

    def to_line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name}\t{self.max_rel_error:.3e}\t{self.tolerance:g}\t{self.coords}\t{status}"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst per-coordinate relative error, ignoring near-zero analytic entries."""
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    large = np.abs(analytic) >= ABS_FLOOR
    if not large.any():
        return 0.0
    a, n = analytic[large], numeric[large]
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a), np.abs(n))))


def absolute_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst absolute error over the near-zero analytic entries."""
    analytic, numeric = np.asarray(analytic, float), np.asarray(numeric, float)
    small = np.abs(analytic) < ABS_FLOOR
    return float(np.max(np.abs(analytic[small] - numeric[small]), initial=0.0))


class Probe(ABC):
    """One differentiable operation (or composite) under test.

    The scalar objective is ``sum(forward() * P)`` for a fixed random
    projection ``P`` (or ``forward()`` itself for scalar cases), evaluated in
    64-bit mode. Central differences with step :data:`STEP` are compared
    against the recorded backward pass.
    """

    name: str = ""
    tolerance: float = OP_TOLERANCE

    def __init__(self, seed: int = 0):
        self.seed = seed

    @abstractmethod
    def build(self, rng: np.random.Generator) -> ProbeCase:
        """Create inputs (with ``requires_grad=True``) and the forward closure."""
        pass

    def coordinates(self, case: ProbeCase, rng: np.random.Generator) -> list[tuple[int, int]]:
        """``(input index, flat index)`` pairs to perturb."""
        coords = []
        for i, tensor in enumerate(case.inputs):
            if tensor.size <= MAX_COORDS:
                picked = range(tensor.size)
            else:
                picked = sorted(rng.choice(tensor.size, size=MAX_COORDS, replace=False).tolist())
            coords.extend((i, int(j)) for j in picked)
        return coords

    def run(self) -> ProbeResult:
        with check_mode():
            rng = np.random.default_rng(self.seed)
            case = self.build(rng)
            projection = None
            if not case.scalar:
                with no_grad():
                    projection = rng.standard_normal(case.forward().shape)

            def objective() -> Tensor:
                out = case.forward()
                return out if projection is None else sum_(mul(out, projection))

            for tensor in case.inputs:
                tensor.grad = None
            with Graph():
                backward(objective())

            analytic, numeric = [], []
            for i, j in self.coordinates(case, rng):
                tensor = case.inputs[i]
                grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
                analytic.append(grad.flat[j])
                original = tensor.data.flat[j]
                with no_grad():
                    tensor.data.flat[j] = original + STEP
                    plus = objective().item()
                    tensor.data.flat[j] = original - STEP
                    minus = objective().item()
                tensor.data.flat[j] = original
                numeric.append((plus - minus) / (2 * STEP))

        analytic, numeric = np.asarray(analytic), np.asarray(numeric)
        error = relative_error(analytic, numeric)
        result = ProbeResult(
            self.name, error, self.tolerance, len(analytic), absolute_error(analytic, numeric)
        )
        logger.debug(
            "probe %s: max rel error %.3e, max abs error %.3e over %d coords",
            self.name, error, result.max_abs_error, result.coords,
        )
        return result


def leaf(
    rng: np.random.Generator, shape: tuple[int, ...], low: float = -1.0, high: float = 1.0
) -> Tensor:
    """Uniform random tensor that requires grad."""
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)
