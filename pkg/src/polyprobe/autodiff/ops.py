"""Differentiable operations.

Each op computes its value eagerly and, when a tape is active and any input
requires a gradient, records a closure that maps the output gradient to the
input gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DomainError, ShapeError
from . import conv as _conv
from .tensor import Tensor, as_tensor, record_op

LEAKY_SLOPE = 0.2
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return record_op(
        a.values + b.values, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return record_op(
        a.values - b.values, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.values, b.values
    return record_op(
        av * bv, (a, b),
        lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)), "mul",
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.values, b.values
    return record_op(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return record_op(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record_op(out, (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.values.mean(axis=axis, keepdims=keepdims)
    n = a.size // max(out.size, 1) if a.size else 1

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return record_op(out, (a,), back, "mean")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    return record_op(np.maximum(a.values, 0.0), (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    x = a.values
    pos = x > 0
    return record_op(np.where(pos, x, slope * x), (a,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.values)
    return record_op(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.values
    # split by sign so exp never overflows
    ex = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex))
    return record_op(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    if lo > hi:
        raise ContractError(f"clamp: lo={lo} > hi={hi}")
    inside = (a.values >= lo) & (a.values <= hi)
    return record_op(np.clip(a.values, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.values <= 0) or np.any(np.isnan(a.values)):
        raise DomainError("log of a non-positive value; clamp the input first")
    x = a.values
    return record_op(np.log(x), (a,), lambda g: (g / x,), "log")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.values)
    return record_op(y, (a,), lambda g: (g * y,), "exp")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return record_op(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.values - a.values.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return record_op(
        y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax"
    )


def conv2d(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    x, kernel = as_tensor(x), as_tensor(kernel)
    xv, wv = x.values, kernel.values
    out = _conv.conv2d_forward(xv, wv, stride, padding)

    def back(g):
        return (
            _conv.conv2d_grad_input(g, wv, xv.shape, stride, padding) if x.requires_grad else None,
            _conv.conv2d_grad_weight(g, xv, wv.shape, stride, padding) if kernel.requires_grad else None,
        )

    return record_op(out, (x, kernel), back, "conv2d")


def conv2d_transpose(x, kernel, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution; ``kernel`` is ``(C_in, C_out, kh, kw)``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    xv, wv = x.values, kernel.values
    out = _conv.conv2d_transpose_forward(xv, wv, stride, padding)

    def back(g):
        return (
            _conv.conv2d_forward(g, wv, stride, padding) if x.requires_grad else None,
            _conv.conv2d_grad_weight(xv, g, wv.shape, stride, padding) if kernel.requires_grad else None,
        )

    return record_op(out, (x, kernel), back, "conv2d_transpose")


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fresh(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels))


def batchnorm(
    x,
    gamma,
    beta,
    mode: str = "train",
    running_stats: RunningStats | None = None,
    eps: float = BN_EPS,
    momentum: float = BN_MOMENTUM,
) -> Tensor:
    """Per-channel normalization over every axis except axis 1.

    Training mode uses batch statistics and, if ``running_stats`` is given,
    updates it in place (unbiased variance, like common frameworks).
    Evaluation mode normalizes with ``running_stats``.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim not in (2, 4):
        raise ShapeError(f"batchnorm expects (N, C) or (N, C, H, W), got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},)")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    xv = x.values
    gv = gamma.values.reshape(bshape)

    if mode == "train":
        m = xv.size // c
        mu = xv.mean(axis=axes, keepdims=True)
        var = xv.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xv - mu) * inv
        if running_stats is not None:
            unbiased = var.reshape(c) * (m / max(m - 1, 1))
            running_stats.mean = (1 - momentum) * running_stats.mean + momentum * mu.reshape(c)
            running_stats.var = (1 - momentum) * running_stats.var + momentum * unbiased

        def back(g):
            gxhat = g * gv
            gx = inv * (
                gxhat
                - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
            )
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    elif mode == "eval":
        if running_stats is None:
            raise ContractError("batchnorm eval mode needs running_stats")
        inv = 1.0 / np.sqrt(running_stats.var.reshape(bshape) + eps)
        xhat = (xv - running_stats.mean.reshape(bshape)) * inv

        def back(g):
            return g * gv * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    else:
        raise ContractError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")

    out = xhat * gv + beta.values.reshape(bshape)
    return record_op(out, (x, gamma, beta), back, "batchnorm")
