"""Named trainable tensors with deterministic initialization order."""

from __future__ import annotations

import logging
from typing import Iterator, Mapping

import numpy as np

from allweather.errors import ContractError
from allweather.tensor import Tensor, get_dtype

logger = logging.getLogger(__name__)

TRUNC_STD = 0.02


class ParameterStore(Mapping[str, Tensor]):
    """Ordered mapping of parameter name to :class:`Tensor`.

    Parameters are drawn from one seeded generator in registration order, so a
    given (network config, seed) pair always yields the same values. Draws
    happen in 64-bit and are cast to the active dtype once.
    """

    def __init__(self, seed: int = 0, trainable: bool = True):
        self.seed = seed
        self.trainable = trainable
        self.rng = np.random.default_rng(seed)
        self._params: dict[str, Tensor] = {}

    # Mapping protocol

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    # Registration

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ContractError(f"parameter {name!r} registered twice")
        tensor = Tensor(data, requires_grad=self.trainable, name=name)
        self._params[name] = tensor
        return tensor

    def trunc_normal(self, name: str, shape: tuple[int, ...], std: float = TRUNC_STD) -> Tensor:
        """Normal(0, std) truncated at ±2·std by redrawing out-of-range samples."""
        values = self.rng.normal(0.0, std, size=shape)
        outside = np.abs(values) > 2 * std
        while outside.any():
            values[outside] = self.rng.normal(0.0, std, size=int(outside.sum()))
            outside = np.abs(values) > 2 * std
        return self.add(name, values)

    def fan_in_uniform(self, name: str, shape: tuple[int, ...]) -> Tensor:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in = prod(shape[1:])."""
        fan_in = int(np.prod(shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.add(name, np.ones(shape))

    def scope(self, prefix: str) -> ParameterScope:
        return ParameterScope(self, prefix)

    # Bulk operations

    def num_params(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def state(self) -> dict[str, np.ndarray]:
        """Copy of every parameter array, in registration order."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values; names and shapes must match exactly."""
        missing = [name for name in self._params if name not in state]
        extra = [name for name in state if name not in self._params]
        if missing or extra:
            raise ContractError(
                f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}"
            )
        for name, tensor in self._params.items():
            value = np.asarray(state[name])
            if value.shape != tensor.shape:
                raise ContractError(f"parameter {name!r}: shape {value.shape} != {tensor.shape}")
            tensor.data = value.astype(tensor.dtype, copy=True)
        logger.debug("Loaded %d parameter tensors", len(self._params))

    def astype(self, dtype: np.dtype | None = None) -> None:
        """Convert every parameter in place (check mode uses float64)."""
        dtype = np.dtype(dtype or get_dtype())
        for tensor in self._params.values():
            tensor.data = tensor.data.astype(dtype)
            tensor.grad = None


class ParameterScope:
    """View on a store that prefixes every name with ``prefix.``."""

    def __init__(self, store: ParameterStore, prefix: str):
        self.store = store
        self.prefix = prefix

    def name(self, leaf: str) -> str:
        return f"{self.prefix}.{leaf}" if self.prefix else leaf

    def scope(self, child: str) -> ParameterScope:
        return ParameterScope(self.store, self.name(child))

    def trunc_normal(self, leaf: str, shape: tuple[int, ...], std: float = TRUNC_STD) -> Tensor:
        return self.store.trunc_normal(self.name(leaf), shape, std)

    def fan_in_uniform(self, leaf: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.fan_in_uniform(self.name(leaf), shape)

    def zeros(self, leaf: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.zeros(self.name(leaf), shape)

    def ones(self, leaf: str, shape: tuple[int, ...]) -> Tensor:
        return self.store.ones(self.name(leaf), shape)

    def add(self, leaf: str, data: np.ndarray) -> Tensor:
        return self.store.add(self.name(leaf), data)

    def items(self) -> list[tuple[str, Tensor]]:
        """Parameters registered under this prefix."""
        head = f"{self.prefix}."
        return [(n, t) for n, t in self.store.items() if n.startswith(head)]
