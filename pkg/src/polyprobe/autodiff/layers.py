"""Minimal layer stack used by the GAN and the shape classifier."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..errors import ContractError
from . import ops
from .ops import RunningStats
from .tensor import Tensor

INIT_STD = 0.02


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def load_buffers(self, bufs: dict[str, np.ndarray]) -> None:
        pass

    def describe(self) -> dict:
        return {"kind": self.kind}


def _param(values, name) -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, c_in, c_out, kernel, stride, padding, rng, bias=False):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.params["weight"] = _param(rng.normal(0.0, INIT_STD, (c_out, c_in, kernel, kernel)), "weight")
        if bias:
            self.params["bias"] = _param(np.zeros(c_out), "bias")

    def __call__(self, x, training):
        y = ops.conv2d(x, self.params["weight"], self.stride, self.padding)
        if "bias" in self.params:
            y = y + ops.reshape(self.params["bias"], (1, -1, 1, 1))
        return y

    def describe(self):
        o, c, k, _ = self.params["weight"].shape
        return {"kind": self.kind, "in": c, "out": o, "kernel": k, "stride": self.stride, "padding": self.padding}


class ConvTranspose2d(Layer):
    kind = "conv2d_transpose"

    def __init__(self, c_in, c_out, kernel, stride, padding, rng, bias=False):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.params["weight"] = _param(rng.normal(0.0, INIT_STD, (c_in, c_out, kernel, kernel)), "weight")
        if bias:
            self.params["bias"] = _param(np.zeros(c_out), "bias")

    def __call__(self, x, training):
        y = ops.conv2d_transpose(x, self.params["weight"], self.stride, self.padding)
        if "bias" in self.params:
            y = y + ops.reshape(self.params["bias"], (1, -1, 1, 1))
        return y

    def describe(self):
        c, o, k, _ = self.params["weight"].shape
        return {"kind": self.kind, "in": c, "out": o, "kernel": k, "stride": self.stride, "padding": self.padding}


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels, rng):
        super().__init__()
        self.params["gamma"] = _param(rng.normal(1.0, INIT_STD, channels), "gamma")
        self.params["beta"] = _param(np.zeros(channels), "beta")
        self.stats = RunningStats.fresh(channels)

    def __call__(self, x, training):
        return ops.batchnorm(
            x, self.params["gamma"], self.params["beta"],
            mode="train" if training else "eval", running_stats=self.stats,
        )

    def buffers(self):
        return {"running_mean": self.stats.mean, "running_var": self.stats.var}

    def load_buffers(self, bufs):
        self.stats = RunningStats(bufs["running_mean"].copy(), bufs["running_var"].copy())

    def describe(self):
        return {"kind": self.kind, "channels": len(self.stats.mean)}


class Activation(Layer):
    _fns = {
        "relu": ops.relu,
        "leaky_relu": ops.leaky_relu,
        "tanh": ops.tanh,
        "sigmoid": ops.sigmoid,
        "identity": lambda x: x,
    }

    def __init__(self, name: str):
        super().__init__()
        if name not in self._fns:
            raise ContractError(f"unknown activation {name!r}")
        self.kind = name

    def __call__(self, x, training):
        return self._fns[self.kind](x)


class Reshape(Layer):
    """Reshape the per-sample part of a batch (the batch axis is kept)."""

    kind = "reshape"

    def __init__(self, *shape: int):
        super().__init__()
        self.shape = shape

    def __call__(self, x, training):
        return ops.reshape(x, (x.shape[0],) + self.shape)

    def describe(self):
        return {"kind": self.kind, "shape": list(self.shape)}


class Network:
    """An ordered stack of named layers."""

    def __init__(self, layers: Iterable[tuple[str, Layer]], **meta):
        self.layers = list(layers)
        self.meta = meta

    def __call__(self, x, training: bool = True) -> Tensor:
        for _, layer in self.layers:
            x = layer(x, training)
        return x

    def named_parameters(self) -> dict[str, Tensor]:
        return {f"{ln}.{pn}": p for ln, layer in self.layers for pn, p in layer.params.items()}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag: bool) -> "Network":
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: p.values for k, p in self.named_parameters().items()}
        for ln, layer in self.layers:
            for bn, b in layer.buffers().items():
                state[f"{ln}.{bn}"] = b
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters().items():
            if name not in state:
                raise ContractError(f"checkpoint is missing parameter {name!r}")
            if state[name].shape != p.shape:
                raise ContractError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.values = np.array(state[name], dtype=np.float64)
        for ln, layer in self.layers:
            bufs = layer.buffers()
            if bufs:
                layer.load_buffers({bn: state[f"{ln}.{bn}"] for bn in bufs})

    def describe(self) -> list[dict]:
        return [dict(name=ln, **layer.describe()) for ln, layer in self.layers]
