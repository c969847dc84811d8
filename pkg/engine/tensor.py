# engine/tensor.py
"""
Dense tensors with reverse-mode differentiation.

- Tensor wraps a float64 numpy array (float32 only as a storage format, see data/fileformats.py)
- Parameter is a Tensor with a gradient accumulator and a stable name
- Tape records every primitive executed while it is active; Tape.backward replays
  the record in reverse and accumulates into the reachable Parameters

Usage:
    with Tape() as tape:
        loss = some_scalar_expression(params)
    tape.backward(loss)
"""

import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolation, NumericError

DTYPE = np.float64

_local = threading.local()


def _stack() -> List["Tape"]:
    st = getattr(_local, "tapes", None)
    if st is None:
        st = []
        _local.tapes = st
    return st


def active_tape() -> Optional["Tape"]:
    st = _stack()
    return st[-1] if st else None


class Tensor:
    __slots__ = ("data", "_tape")
    # let numpy arrays on the left defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, dtype=DTYPE):
        arr = np.array(data, dtype=dtype)
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite value in tensor of shape {arr.shape}")
        self.data = arr
        self._tape = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t._tape = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


class Parameter(Tensor):
    """Trainable tensor. `name` is the key used for optimizer state and checkpoints."""

    __slots__ = ("name", "grad")

    def __init__(self, data, name: str):
        super().__init__(data)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# vjp maps the output gradient to one gradient (or None) per input
Vjp = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class _Record:
    out: Tensor
    inputs: Tuple[Tensor, ...]
    vjp: Vjp
    op: str


class Tape:
    def __init__(self):
        self._records: List[_Record] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        st = _stack()
        if st and st[-1] is self:
            st.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    @property
    def ops(self) -> List[str]:
        return [r.op for r in self._records]

    def record(self, out: Tensor, inputs: Sequence[Tensor], vjp: Vjp, op: str):
        out._tape = self
        self._records.append(_Record(out, tuple(inputs), vjp, op))

    def reset(self):
        for r in self._records:
            r.out._tape = None
        self._records.clear()
        self._spent = False

    def backward(self, output: Tensor):
        if output._tape is not self:
            raise ContractViolation("backward: output was not produced on this tape")
        if output.size != 1:
            raise ContractViolation(f"backward needs a scalar output, got shape {output.shape}")
        if self._spent:
            raise ContractViolation("backward already ran on this tape; reset() it first")
        self._spent = True

        grads = {id(output): np.ones_like(output.data)}
        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            if g is None:
                continue
            for t, gi in zip(rec.inputs, rec.vjp(g)):
                if gi is None:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise NumericError(f"non-finite gradient flowing out of {rec.op}")
                if isinstance(t, Parameter):
                    t.grad += gi
                else:
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi


def backward(output: Tensor):
    """Backpropagate a scalar through the tape that produced it."""
    if output._tape is None:
        raise ContractViolation("backward: output was not produced on an active tape")
    output._tape.backward(output)


def zero_grad(params: Sequence[Parameter]):
    for p in params:
        p.zero_grad()
