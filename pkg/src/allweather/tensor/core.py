"""Tensor storage and the dynamically recorded computation graph.

Every differentiable operation is a :class:`Function` subclass. Applying one
to tensors that require gradients appends a :class:`Node` to the active
:class:`Graph`; :meth:`Graph.backward` walks the nodes in reverse record order,
which is a valid reverse topological order because a node can only consume
tensors that already exist.
"""

from __future__ import annotations

import itertools
import weakref
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from allweather.errors import ContractError

_NODE_IDS = itertools.count(1)

_DTYPE: ContextVar[np.dtype] = ContextVar("allweather_dtype", default=np.dtype(np.float32))
_GRAD_ENABLED: ContextVar[bool] = ContextVar("allweather_grad_enabled", default=True)
_GRAPH: ContextVar[Graph | None] = ContextVar("allweather_graph", default=None)


def get_dtype() -> np.dtype:
    """Return the floating point type new tensors are created with."""
    return _DTYPE.get()


@contextmanager
def precision(dtype: Any) -> Iterator[None]:
    """Create tensors with ``dtype`` inside the block."""
    token = _DTYPE.set(np.dtype(dtype))
    try:
        yield
    finally:
        _DTYPE.reset(token)


@contextmanager
def check_mode() -> Iterator[None]:
    """64-bit mode used only for finite-difference gradient verification."""
    with precision(np.float64):
        yield


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


@dataclass(eq=False)
class Node:
    """One recorded operation: inputs, output and the rule to push gradients back."""

    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn
    graph: Graph


class Graph:
    """Ordered record of operations for one forward pass.

    Graphs are per context (and therefore per thread). Use a graph as a
    context manager to scope a recording explicitly; otherwise an
    :class:`AmbientGraph` is created lazily for the current context.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._tokens: list[Any] = []

    def __enter__(self) -> Graph:
        self._tokens.append(_GRAPH.set(self))
        return self

    def __exit__(self, *exc_info: object) -> None:
        _GRAPH.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        """Free the recording; outputs become leaves again."""
        for node in self.nodes:
            node.output._node = None
        self.nodes = []

    def first_non_finite(self) -> Node | None:
        """Return the earliest recorded node whose output holds NaN or Inf."""
        for node in self.nodes:
            if not np.all(np.isfinite(node.output.data)):
                return node
        return None

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every requires-grad leaf recorded in this graph.

        Leaves that the loss does not depend on receive a zero gradient.
        Gradients accumulate into existing ``.grad`` arrays.
        """
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")

        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        if loss.is_leaf:
            leaves[loss.node_id] = loss

        for node in reversed(self.nodes):
            for inp in node.inputs:
                if inp.requires_grad and inp.is_leaf:
                    leaves.setdefault(inp.node_id, inp)
            grad = grads.pop(node.output.node_id, None)
            if grad is None:
                continue
            for inp, inp_grad in zip(node.inputs, node.backward(grad)):
                if inp_grad is None or not inp.requires_grad:
                    continue
                previous = grads.get(inp.node_id)
                grads[inp.node_id] = inp_grad if previous is None else previous + inp_grad

        for node_id, leaf in leaves.items():
            grad = grads.get(node_id)
            grad = np.zeros_like(leaf.data) if grad is None else np.array(grad, dtype=leaf.data.dtype)
            leaf.grad = grad if leaf.grad is None else leaf.grad + grad

        self.clear()


class AmbientGraph(Graph):
    """Graph used outside any explicit scope.

    Nodes are held weakly, so a forward pass that is never differentiated is
    released together with its outputs. Leaves that only fed released nodes
    are no longer known here and get no zero gradient on backward.
    """

    compact_every = 1024

    @property
    def nodes(self) -> list[Node]:
        return [node for ref in self._refs if (node := ref()) is not None]

    @nodes.setter
    def nodes(self, value: list[Node]) -> None:
        self._refs = [weakref.ref(node) for node in value]

    def record(self, node: Node) -> None:
        self._refs.append(weakref.ref(node))
        if len(self._refs) % self.compact_every == 0:
            self._refs = [ref for ref in self._refs if ref() is not None]


def current_graph() -> Graph:
    """Return the graph operations are recorded into in this context."""
    graph = _GRAPH.get()
    if graph is None:
        graph = AmbientGraph()
        _GRAPH.set(graph)
    return graph


class Tensor:
    """Dense n-dimensional array with an optional gradient slot."""

    # Makes ``ndarray * Tensor`` dispatch to Tensor.__rmul__.
    __array_priority__ = 100

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: str | None = None,
    ):
        self.data = np.asarray(data, dtype=get_dtype())
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.node_id = next(_NODE_IDS)
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad}{label})"
        )

    # Operator sugar; implementations live in allweather.tensor.ops.

    def __add__(self, other: Any) -> Tensor:
        return _ops().add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return _ops().add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return _ops().sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return _ops().sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return _ops().mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return _ops().mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return _ops().div(self, other)

    def __neg__(self) -> Tensor:
        return _ops().neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return _ops().matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        return _ops().getitem(self, index)

    def reshape(self, *shape: int) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes: int) -> Tensor:
        return _ops().transpose(self, axes or None)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return _ops().mean(self, axis=axis, keepdims=keepdims)


def _ops():
    from allweather.tensor import ops

    return ops


def backward(loss: Tensor) -> None:
    """Reverse-mode differentiation of a scalar ``loss``."""
    if loss._node is None:
        if loss.data.size != 1:
            raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ContractError("loss does not depend on any tensor that requires grad")
        seed = np.ones_like(loss.data)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    loss._node.graph.backward(loss)


class Function:
    """Base class for differentiable operations.

    ``forward`` receives raw arrays and may stash whatever ``backward`` needs on
    ``self``. ``backward`` returns one gradient (or ``None``) per input.
    """

    name: str = ""

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[np.ndarray | None]:
        raise NotImplementedError

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        fn = cls()
        out_data = fn.forward(*(t.data for t in tensors), **kwargs)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        out = Tensor(out_data, requires_grad=requires_grad)
        if requires_grad:
            graph = current_graph()
            node = Node(cls.name or cls.__name__.lower(), tuple(tensors), out, fn.backward, graph)
            out._node = node
            graph.record(node)
        return out
