"""Differentiable operations on :class:`~allweather.tensor.core.Tensor`.

Broadcasting follows numpy's trailing-axis rules. Gradients of broadcast
operands are summed back to the operand's shape.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from allweather.errors import ContractError, DimensionError
from allweather.tensor.core import Function, Tensor

# sqrt(2/pi)
GELU_COEFF = 0.7978845608
GELU_CUBIC = 0.044715

Axis = int | tuple[int, ...] | None


def as_tensor(value: Any) -> Tensor:
    """Wrap constants so they can take part in tensor expressions."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting expanded to reach ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shapes(op: str, a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a} and {b} are not broadcastable") from None


# Elementwise


class Add(Function):
    def forward(self, a, b):
        _broadcast_shapes("add", a.shape, b.shape)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shapes("sub", a.shape, b.shape)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shapes("mul", a.shape, b.shape)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return (
            unbroadcast(grad * self.b, self.a.shape),
            unbroadcast(grad * self.a, self.b.shape),
        )


class Div(Function):
    def forward(self, a, b):
        _broadcast_shapes("div", a.shape, b.shape)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return (
            unbroadcast(grad / self.b, self.a.shape),
            unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape),
        )


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Tanh(Function):
    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Gelu(Function):
    """Tanh approximation of the Gaussian error linear unit."""

    def forward(self, a):
        self.a = a
        self.t = np.tanh(GELU_COEFF * (a + GELU_CUBIC * a * a * a))
        return 0.5 * a * (1.0 + self.t)

    def backward(self, grad):
        a, t = self.a, self.t
        inner = GELU_COEFF * (1.0 + 3.0 * GELU_CUBIC * a * a)
        return (grad * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * inner),)


def add(a: Any, b: Any) -> Tensor:
    return Add.apply(as_tensor(a), as_tensor(b))


def sub(a: Any, b: Any) -> Tensor:
    return Sub.apply(as_tensor(a), as_tensor(b))


def mul(a: Any, b: Any) -> Tensor:
    """Hadamard product (with broadcasting)."""
    return Mul.apply(as_tensor(a), as_tensor(b))


def div(a: Any, b: Any) -> Tensor:
    return Div.apply(as_tensor(a), as_tensor(b))


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def tanh(a: Tensor) -> Tensor:
    return Tanh.apply(a)


def gelu(a: Tensor) -> Tensor:
    return Gelu.apply(a)


# Linear algebra and reductions


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise DimensionError(
                f"matmul: batch dims of {a.shape} and {b.shape} are not broadcastable"
            ) from None
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        a, b = self.a, self.b
        grad_a = grad @ np.swapaxes(b, -1, -2)
        grad_b = np.swapaxes(a, -1, -2) @ grad
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)


class Softmax(Function):
    def forward(self, a, axis=-1):
        self.axis = axis
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        y = self.out
        return (y * (grad - (grad * y).sum(axis=self.axis, keepdims=True)),)


class Sum(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.asarray(a.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape),)


class Mean(Function):
    def forward(self, a, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        out = np.asarray(a.mean(axis=axis, keepdims=keepdims))
        self.count = a.size // max(out.size, 1)
        return out

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.shape),)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., M, K] @ [..., K, N]``."""
    return MatMul.apply(a, b)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``."""
    return Softmax.apply(a, axis=axis)


def sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(a, axis=axis, keepdims=keepdims)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Position-wise affine map ``x @ weight + bias`` over the last axis."""
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# Data movement


class Reshape(Function):
    def forward(self, a, shape=()):
        self.shape = a.shape
        try:
            return a.reshape(shape)
        except ValueError:
            raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a, axes=None):
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        first = arrays[0]
        axis = axis % first.ndim
        for arr in arrays[1:]:
            if arr.ndim != first.ndim or any(
                arr.shape[d] != first.shape[d] for d in range(first.ndim) if d != axis
            ):
                raise DimensionError(
                    f"concat: shapes {[a.shape for a in arrays]} differ off axis {axis}"
                )
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class GetItem(Function):
    def forward(self, a, index=None):
        self.shape, self.dtype, self.index = a.shape, a.dtype, index
        return np.array(a[index])

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=self.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class UpsampleNearest(Function):
    def forward(self, a, factor=2):
        self.factor = factor
        return a.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def backward(self, grad):
        f = self.factor
        *lead, h, w = grad.shape
        return (grad.reshape(*lead, h // f, f, w // f, f).sum(axis=(-3, -1)),)


class AvgPool2d(Function):
    def forward(self, a, kernel=2):
        *lead, h, w = a.shape
        if h % kernel or w % kernel:
            raise DimensionError(f"avg_pool2d: spatial dims {(h, w)} not divisible by {kernel}")
        self.kernel = kernel
        return a.reshape(*lead, h // kernel, kernel, w // kernel, kernel).mean(axis=(-3, -1))

    def backward(self, grad):
        k = self.kernel
        return (grad.repeat(k, axis=-2).repeat(k, axis=-1) / (k * k),)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    return Transpose.apply(a, axes=axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    return Concat.apply(*tensors, axis=axis)


def getitem(a: Tensor, index: Any) -> Tensor:
    """Slice or gather; the backward scatters into a zero array."""
    return GetItem.apply(a, index=index)


def upsample_nearest(a: Tensor, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by an integer factor."""
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ContractError(f"upsample factor must be a positive integer, got {factor!r}")
    if factor == 1:
        return a
    return UpsampleNearest.apply(a, factor=int(factor))


def avg_pool2d(a: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping average pooling of the last two axes."""
    return AvgPool2d.apply(a, kernel=kernel)


# Convolution and normalization


class Conv2d(Function):
    """Grouped 2-D cross-correlation, NCHW layout, weight ``[O, C/groups, kh, kw]``."""

    def forward(self, x, w, b=None, stride=1, padding=0, groups=1):
        if x.ndim != 4 or w.ndim != 4:
            raise DimensionError(f"conv2d: expected 4-d input and weight, got {x.shape} and {w.shape}")
        batch, channels, height, width = x.shape
        out_channels, group_channels, kh, kw = w.shape
        if channels % groups or out_channels % groups:
            raise DimensionError(
                f"conv2d: channels {channels} -> {out_channels} not divisible by groups={groups}"
            )
        if group_channels != channels // groups:
            raise DimensionError(
                f"conv2d: weight {w.shape} expects {group_channels * groups} input channels, "
                f"input {x.shape} has {channels}"
            )
        if b is not None and b.shape != (out_channels,):
            raise DimensionError(f"conv2d: bias {b.shape} does not match {out_channels} outputs")
        if height + 2 * padding < kh or width + 2 * padding < kw:
            raise DimensionError(
                f"conv2d: kernel {(kh, kw)} does not fit padded input {(height, width)} (pad={padding})"
            )

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        out_h = (height + 2 * padding - kh) // stride + 1
        out_w = (width + 2 * padding - kw) // stride + 1
        wg = w.reshape(groups, out_channels // groups, group_channels, kh, kw)

        out = np.zeros((batch, groups, out_channels // groups, out_h, out_w), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = self._patch(xp, i, j, stride, out_h, out_w).reshape(
                    batch, groups, group_channels, out_h, out_w
                )
                out += np.einsum("bgchw,goc->bgohw", patch, wg[..., i, j], optimize=True)
        out = out.reshape(batch, out_channels, out_h, out_w)
        if b is not None:
            out += b[None, :, None, None]

        self.xp, self.wg, self.w_shape = xp, wg, w.shape
        self.x_shape, self.has_bias = x.shape, b is not None
        self.stride, self.padding, self.groups = stride, padding, groups
        return out

    @staticmethod
    def _patch(xp, i, j, stride, out_h, out_w):
        rows = slice(i, i + stride * (out_h - 1) + 1, stride)
        cols = slice(j, j + stride * (out_w - 1) + 1, stride)
        return xp[:, :, rows, cols]

    def backward(self, grad):
        xp, wg, stride, padding = self.xp, self.wg, self.stride, self.padding
        batch, channels, height, width = self.x_shape
        groups, _, group_channels, kh, kw = wg.shape
        out_h, out_w = grad.shape[2:]
        grad_g = grad.reshape(batch, groups, -1, out_h, out_w)

        grad_w = np.zeros_like(wg)
        grad_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                window = self._patch(xp, i, j, stride, out_h, out_w)
                patch = window.reshape(batch, groups, group_channels, out_h, out_w)
                grad_w[..., i, j] = np.einsum("bgohw,bgchw->goc", grad_g, patch, optimize=True)
                contrib = np.einsum("bgohw,goc->bgchw", grad_g, wg[..., i, j], optimize=True)
                self._patch(grad_xp, i, j, stride, out_h, out_w)[...] += contrib.reshape(
                    batch, channels, out_h, out_w
                )

        grad_x = grad_xp[:, :, padding : padding + height, padding : padding + width]
        grads = [grad_x, grad_w.reshape(self.w_shape)]
        if self.has_bias:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return tuple(grads)


class LayerNorm(Function):
    def forward(self, x, gamma, beta, eps=1e-6):
        if x.shape[-1] == 0:
            raise DimensionError("layernorm: last axis is empty")
        if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
            raise DimensionError(
                f"layernorm: affine params {gamma.shape}/{beta.shape} do not match {x.shape}"
            )
        centered = x - x.mean(axis=-1, keepdims=True)
        var = (centered * centered).mean(axis=-1, keepdims=True)
        self.rstd = 1.0 / np.sqrt(var + eps)
        self.xhat = centered * self.rstd
        self.gamma = gamma
        return self.xhat * gamma + beta

    def backward(self, grad):
        xhat, rstd = self.xhat, self.rstd
        features = xhat.shape[-1]
        dxhat = grad * self.gamma
        grad_x = rstd * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        grad_gamma = (grad * xhat).reshape(-1, features).sum(axis=0)
        grad_beta = grad.reshape(-1, features).sum(axis=0)
        return grad_x, grad_gamma, grad_beta


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """Output spatial size is ``floor((H + 2*padding - k) / stride) + 1``."""
    tensors = (x, weight) if bias is None else (x, weight, bias)
    return Conv2d.apply(*tensors, stride=stride, padding=padding, groups=groups)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply ``gamma``/``beta``."""
    return LayerNorm.apply(x, gamma, beta, eps=eps)
