"""Minimal reverse-mode automatic differentiation on numpy arrays."""

from allweather.tensor.core import (
    AmbientGraph,
    Function,
    Graph,
    Node,
    Tensor,
    backward,
    check_mode,
    current_graph,
    get_dtype,
    is_grad_enabled,
    no_grad,
    precision,
)
from allweather.tensor.ops import (
    add,
    as_tensor,
    avg_pool2d,
    concat,
    conv2d,
    div,
    gelu,
    getitem,
    layernorm,
    linear,
    matmul,
    mean,
    mul,
    neg,
    reshape,
    softmax,
    sub,
    tanh,
    transpose,
    upsample_nearest,
)
from allweather.tensor.ops import sum as sum_  # noqa: A004

__all__ = [
    "AmbientGraph",
    "Function",
    "Graph",
    "Node",
    "Tensor",
    "add",
    "as_tensor",
    "avg_pool2d",
    "backward",
    "check_mode",
    "concat",
    "conv2d",
    "current_graph",
    "div",
    "gelu",
    "get_dtype",
    "getitem",
    "is_grad_enabled",
    "layernorm",
    "linear",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "precision",
    "reshape",
    "softmax",
    "sub",
    "sum_",
    "tanh",
    "transpose",
    "upsample_nearest",
]
