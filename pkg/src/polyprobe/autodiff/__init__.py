"""Reverse-mode automatic differentiation over float64 numpy arrays."""

from .checkpoint import load_checkpoint, save_checkpoint
from .ops import (
    RunningStats,
    add,
    batchnorm,
    clamp,
    conv2d,
    conv2d_transpose,
    exp,
    leaky_relu,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum,
    tanh,
)
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward

__all__ = [
    "AdamState", "RunningStats", "Tape", "Tensor", "adam_step", "add", "backward",
    "batchnorm", "clamp", "conv2d", "conv2d_transpose", "exp", "leaky_relu", "load_checkpoint",
    "log", "log_softmax", "matmul", "mean", "mul", "relu", "reshape", "save_checkpoint",
    "sigmoid", "softmax", "sub", "sum", "tanh",
]
