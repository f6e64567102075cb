"""Adam, the step-halving learning-rate schedule and gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from allweather.config.models import ScheduleConfig
from allweather.errors import ContractError, FormatError, InputError
from allweather.tensor import Tensor


@dataclass
class OptimState:
    """First/second moment accumulators per parameter plus the step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class Adam:
    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 0.0002,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = OptimState(
            m={name: np.zeros_like(t.data) for name, t in params.items()},
            v={name: np.zeros_like(t.data) for name, t in params.items()},
        )

    def step(self, lr: float | None = None) -> None:
        """Apply one bias-corrected update using each parameter's ``.grad``."""
        for name, tensor in self.params.items():
            if tensor.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient; run backward() first")
        lr = self.lr if lr is None else lr
        self.state.step += 1
        t = self.state.step
        correction1 = 1.0 - self.beta1**t
        correction2 = 1.0 - self.beta2**t
        for name, tensor in self.params.items():
            grad = tensor.grad
            m = self.state.m[name] = self.beta1 * self.state.m[name] + (1.0 - self.beta1) * grad
            v = self.state.v[name] = self.beta2 * self.state.v[name] + (1.0 - self.beta2) * grad * grad
            update = lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            tensor.data = (tensor.data - update).astype(tensor.dtype)

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moments keyed ``m/<param>`` and ``v/<param>``."""
        out = {f"m/{name}": arr for name, arr in self.state.m.items()}
        out.update({f"v/{name}": arr for name, arr in self.state.v.items()})
        return out

    def load_state_tensors(self, tensors: Mapping[str, np.ndarray], step: int) -> None:
        for name, tensor in self.params.items():
            for prefix, slot in (("m", self.state.m), ("v", self.state.v)):
                key = f"{prefix}/{name}"
                if key not in tensors:
                    raise FormatError(f"optimizer state is missing {key!r}")
                if tensors[key].shape != tensor.shape:
                    raise FormatError(f"optimizer state {key!r} has shape {tensors[key].shape}")
                slot[name] = np.array(tensors[key], dtype=tensor.dtype)
        self.state.step = step


def lr_at(epoch: int, schedule: ScheduleConfig) -> float:
    """``base_lr / 2**k`` where ``k`` counts the halving epochs ``<= epoch``."""
    if not 0 <= epoch < schedule.total_epochs:
        raise InputError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    halvings = sum(1 for e in schedule.halve_epochs if e <= epoch)
    return schedule.base_lr / 2**halvings


def global_grad_norm(params: Mapping[str, Tensor]) -> float:
    total = 0.0
    for tensor in params.values():
        if tensor.grad is not None:
            total += float(np.sum(np.square(tensor.grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for tensor in params.values():
            if tensor.grad is not None:
                tensor.grad = (tensor.grad * scale).astype(tensor.grad.dtype)
    return norm
