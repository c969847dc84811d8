# engine/ops.py
"""
Differentiable primitives.

Every op checks its operand shapes (ContractViolation naming both shapes),
refuses non-finite results (NumericError), and records a vector-Jacobian
product on the active tape, if any.

Broadcasting is limited to a 1-D vector over the rows of a 2-D matrix, or a
python scalar constant.
"""

from numbers import Real
from typing import Sequence, Union

import numpy as np

from .errors import ContractViolation, NumericError
from .tensor import Tensor, active_tape, as_tensor

Operand = Union[Tensor, Real]


def _emit(data: np.ndarray, inputs, vjp, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"{op} produced non-finite values")
    out = Tensor._wrap(np.asarray(data, dtype=np.float64))
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, vjp, op)
    return out


def _shapes(a, b) -> str:
    return f"{tuple(np.shape(a))} and {tuple(np.shape(b))}"


def _broadcast(op: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return "rows_b"
    if b.ndim == 2 and a.ndim == 1 and a.shape[0] == b.shape[1]:
        return "rows_a"
    raise ContractViolation(f"{op}: shape mismatch {_shapes(a.data, b.data)}")


def _reduce(g: np.ndarray, kind: str, side: str) -> np.ndarray:
    if kind == "rows_b" and side == "b":
        return g.sum(axis=0)
    if kind == "rows_a" and side == "a":
        return g.sum(axis=0)
    return g


def _binary(op: str, a: Operand, b: Operand, fwd, da, db) -> Tensor:
    """Elementwise op; python scalars are constants (no gradient)."""
    if isinstance(b, Real) and not isinstance(b, Tensor):
        a = as_tensor(a)
        bv = float(b)
        return _emit(fwd(a.data, bv), (a,), lambda g: (da(g, a.data, bv),), op)
    if isinstance(a, Real) and not isinstance(a, Tensor):
        b = as_tensor(b)
        av = float(a)
        return _emit(fwd(av, b.data), (b,), lambda g: (db(g, av, b.data),), op)
    a, b = as_tensor(a), as_tensor(b)
    kind = _broadcast(op, a, b)

    def vjp(g):
        return (_reduce(da(g, a.data, b.data), kind, "a"),
                _reduce(db(g, a.data, b.data), kind, "b"))

    return _emit(fwd(a.data, b.data), (a, b), vjp, op)


# ---------- elementwise arithmetic ----------
def add(a: Operand, b: Operand) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y,
                   lambda g, x, y: g * np.ones_like(x), lambda g, x, y: g * np.ones_like(y))


def sub(a: Operand, b: Operand) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y,
                   lambda g, x, y: g * np.ones_like(x), lambda g, x, y: -g * np.ones_like(y))


def mul(a: Operand, b: Operand) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a: Operand, b: Operand) -> Tensor:
    b_data = b.data if isinstance(b, Tensor) else np.asarray(b, dtype=np.float64)
    if np.any(b_data == 0):
        raise NumericError("div: zero divisor")
    return _binary("div", a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def neg(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def bias_add(x: Tensor, bias: Tensor) -> Tensor:
    x, bias = as_tensor(x), as_tensor(bias)
    if x.ndim != 2 or bias.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise ContractViolation(f"bias_add: shape mismatch {_shapes(x.data, bias.data)}")
    return add(x, bias)


# ---------- linear algebra ----------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractViolation(f"matmul: shape mismatch {_shapes(a.data, b.data)}")
    return _emit(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ContractViolation(f"transpose needs a matrix, got shape {a.shape}")
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.size:
        raise ContractViolation(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _emit(a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),), "reshape")


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ContractViolation("concat: nothing to concatenate")
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.ndim != parts[0].ndim or p.shape[:-1] != lead:
            raise ContractViolation(f"concat: shape mismatch {_shapes(parts[0].data, p.data)}")
    widths = [p.shape[-1] for p in parts]
    cuts = np.cumsum(widths)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _emit(np.concatenate([p.data for p in parts], axis=-1), parts, vjp, "concat")


def vstack(parts: Sequence[Tensor]) -> Tensor:
    """Stack matrices along the row axis."""
    parts = [as_tensor(p) for p in parts]
    for p in parts[1:]:
        if p.ndim != 2 or p.shape[1] != parts[0].shape[1]:
            raise ContractViolation(f"vstack: shape mismatch {_shapes(parts[0].data, p.data)}")
    cuts = np.cumsum([p.shape[0] for p in parts])[:-1]
    return _emit(np.vstack([p.data for p in parts]), parts,
                 lambda g: tuple(np.split(g, cuts, axis=0)), "vstack")


def take_rows(x: Tensor, index) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)

    def vjp(g):
        z = np.zeros_like(x.data)
        np.add.at(z, idx, g)
        return (z,)

    return _emit(x.data[idx], (x,), vjp, "take_rows")


def gather(x: Tensor, rows, cols) -> Tensor:
    """x[rows[i], cols[i]] for each i, as a vector."""
    x = as_tensor(x)
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)
    if x.ndim != 2 or r.shape != c.shape:
        raise ContractViolation(f"gather: shape mismatch {_shapes(x.data, r)}")

    def vjp(g):
        z = np.zeros_like(x.data)
        np.add.at(z, (r, c), g)
        return (z,)

    return _emit(x.data[r, c], (x,), vjp, "gather")


# ---------- nonlinearities ----------
def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _emit(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),), "relu")


def hinge(x: Tensor) -> Tensor:
    """[x]_+ ; same map as relu, kept separate so loss code reads like its formula."""
    x = as_tensor(x)
    return _emit(np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0),), "hinge")


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _emit(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericError("log of a non-positive value")
    return _emit(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor, eps: float = 0.0) -> Tensor:
    """sqrt(x + eps). The derivative at 0 is taken as 0."""
    x = as_tensor(x)
    z = x.data + eps
    if np.any(z < 0):
        raise NumericError("sqrt of a negative value")
    y = np.sqrt(z)

    def vjp(g):
        return (np.divide(g, 2.0 * y, out=np.zeros_like(y), where=y > 0),)

    return _emit(y, (x,), vjp, "sqrt")


def _rows(x: Tensor, op: str) -> np.ndarray:
    if x.ndim == 1:
        return x.data[None, :]
    if x.ndim == 2:
        return x.data
    raise ContractViolation(f"{op} needs a vector or matrix, got shape {x.shape}")


def softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    z = _rows(x, "softmax_rows")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    y = (e / e.sum(axis=1, keepdims=True)).reshape(x.shape)

    def vjp(g):
        yy, gg = y.reshape(z.shape), g.reshape(z.shape)
        return ((yy * (gg - (gg * yy).sum(axis=1, keepdims=True))).reshape(x.shape),)

    return _emit(y, (x,), vjp, "softmax_rows")


def masked_softmax_rows(x: Tensor, mask) -> Tensor:
    """Softmax over the entries of each row where mask is true; all other weights are 0.

    A row with an empty mask yields an all-zero row.
    """
    x = as_tensor(x)
    m = np.asarray(mask, dtype=bool)
    if x.ndim != 2 or m.shape != x.shape:
        raise ContractViolation(f"masked_softmax_rows: shape mismatch {_shapes(x.data, m)}")
    top = np.where(m, x.data, -np.inf).max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(m, np.exp(np.where(m, x.data - top, 0.0)), 0.0)
    s = e.sum(axis=1, keepdims=True)
    y = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit(y, (x,), vjp, "masked_softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise ContractViolation(f"log_softmax_rows needs a matrix, got shape {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _emit(y, (x,), vjp, "log_softmax_rows")


def dropout(x: Tensor, rate: float, train: bool, seed=0) -> Tensor:
    """Inverted dropout. With train=False this is the identity (the same object comes back)."""
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0.0:
        return x
    keep = np.random.default_rng(seed).random(x.shape) >= rate
    scale = keep / (1.0 - rate)
    return _emit(x.data * scale, (x,), lambda g: (g * scale,), "dropout")


# ---------- distances, norms, reductions ----------
def sqdist_rows(a: Tensor, b: Tensor) -> Tensor:
    """Squared Euclidean distance between row i of a and row i of b."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or a.shape != b.shape:
        raise ContractViolation(f"sqdist_rows: shape mismatch {_shapes(a.data, b.data)}")
    d = a.data - b.data

    def vjp(g):
        gd = 2.0 * d * g[:, None]
        return (gd, -gd)

    return _emit((d * d).sum(axis=1), (a, b), vjp, "sqdist_rows")


def pairwise_sqdist(a: Tensor, b: Tensor) -> Tensor:
    """D[i, j] = ||a_i - b_j||^2, computed from differences so it is never negative."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractViolation(f"pairwise_sqdist: shape mismatch {_shapes(a.data, b.data)}")
    diff = a.data[:, None, :] - b.data[None, :, :]
    out = (diff * diff).sum(axis=2)

    def vjp(g):
        ga = 2.0 * (a.data * g.sum(axis=1, keepdims=True) - g @ b.data)
        gb = 2.0 * (b.data * g.sum(axis=0)[:, None] - g.T @ a.data)
        return (ga, gb)

    return _emit(out, (a, b), vjp, "pairwise_sqdist")


def frobenius_norm(x: Tensor) -> Tensor:
    x = as_tensor(x)
    n = float(np.sqrt((x.data * x.data).sum()))

    def vjp(g):
        if n == 0.0:
            return (np.zeros_like(x.data),)
        return (g * x.data / n,)

    return _emit(np.array(n), (x,), vjp, "frobenius_norm")


def sum_all(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _emit(np.array(x.data.sum()), (x,), lambda g: (g * np.ones_like(x.data),), "sum")


def mean(x: Tensor) -> Tensor:
    x = as_tensor(x)
    if x.size == 0:
        raise ContractViolation("mean of an empty tensor")
    n = x.size
    return _emit(np.array(x.data.mean()), (x,), lambda g: (g * np.ones_like(x.data) / n,), "mean")


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the row axis of a matrix."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractViolation(f"mean_rows needs a non-empty matrix, got shape {x.shape}")
    n = x.shape[0]
    return _emit(x.data.mean(axis=0), (x,),
                 lambda g: (np.broadcast_to(g / n, x.shape).copy(),), "mean_rows")


def row_sum(x: Tensor) -> Tensor:
    """Sum over the last axis of a matrix, one value per row."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ContractViolation(f"row_sum needs a matrix, got shape {x.shape}")
    return _emit(x.data.sum(axis=1), (x,),
                 lambda g: (np.broadcast_to(g[:, None], x.shape).copy(),), "row_sum")


def zeros_scalar() -> Tensor:
    return Tensor(0.0)


# ---------- operator sugar ----------
Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(o, self)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__rsub__ = lambda self, o: sub(o, self)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(o, self)
Tensor.__truediv__ = lambda self, o: div(self, o)
Tensor.__rtruediv__ = lambda self, o: div(o, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.T = property(lambda self: transpose(self))
