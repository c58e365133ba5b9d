"""Tensors and the tape that records operations for reverse-mode differentiation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError, ShapeError


class Tensor:
    """A float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "name")
    __array_priority__ = 1000

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, shape is {self.shape}")
        return float(self.values.reshape(()))

    def __float__(self):
        return self.item()

    def __len__(self):
        return len(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; definitions live in ops to keep one code path.
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import mul
        return mul(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: BackwardFn
    op: str


_active: list["Tape"] = []


def current_tape() -> "Tape | None":
    return _active[-1] if _active else None


class Tape:
    """Ordered log of differentiable operations.

    Operations are recorded only while a tape is active (``with Tape() as t``)
    and at least one input requires a gradient.  Records are appended in
    execution order, so the list is already topologically sorted.
    """

    def __init__(self):
        self.records: list[Record] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc):
        _active.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn, op: str) -> None:
        self.records.append(Record(output, tuple(inputs), backward, op))
        self._produced.add(id(output))

    def clear(self) -> None:
        self.records.clear()
        self._produced.clear()

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced by an operation on this tape")
        pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            _accumulate(rec.output, g)
            for t, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ShapeError(f"{rec.op}: gradient shape {gi.shape} != input shape {t.shape}")
                key = id(t)
                pending[key] = pending[key] + gi if key in pending else gi
                if key not in self._produced:
                    leaves[key] = t
        for key, t in leaves.items():
            _accumulate(t, pending.pop(key))


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def record_op(values: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    out = Tensor(values)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward, op)
    return out
