# engine/gradcheck.py
"""
Central finite-difference gradient checker.

    report = grad_check(lambda: loss_of(params), params, step=1e-3)
    assert report.passed, report.max_rel_error
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .errors import CheckPreconditionError, ContractViolation
from .tensor import Parameter, Tape, Tensor, zero_grad

DENOM_EPS = 1e-12


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    floor: Optional[float] = None
    max_rel_error: Dict[str, float] = field(default_factory=dict)
    rel_errors: Dict[str, np.ndarray] = field(default_factory=dict)
    floored_errors: Dict[str, float] = field(default_factory=dict)
    analytic: Dict[str, np.ndarray] = field(default_factory=dict)
    numeric: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        if self.floor is not None:
            return max(self.floored_errors.values(), default=0.0) <= self.tolerance
        return self.worst <= self.tolerance


def _scalar(fn: Callable[[], Tensor]) -> float:
    out = fn()
    if out.size != 1:
        raise ContractViolation(f"grad_check needs a scalar function, got shape {out.shape}")
    return out.item()


def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter],
               step: float = 1e-3, tolerance: float = 1e-4,
               floor: Optional[float] = None) -> GradCheckReport:
    """Compare tape gradients with central differences.

    Relative error per entry is |a - n| / (|a| + |n| + 1e-12); `max_rel_error` always
    reports that. With `floor` set, pass/fail uses |a - n| / max(|a| + |n|, floor) instead.
    """
    first, second = _scalar(fn), _scalar(fn)
    if first != second:
        raise CheckPreconditionError(
            f"function is not deterministic: {first!r} != {second!r} (disable dropout or fix its seed)")

    zero_grad(params)
    with Tape() as tape:
        out = fn()
    tape.backward(out)

    report = GradCheckReport(step=step, tolerance=tolerance, floor=floor)
    for p in params:
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = _scalar(fn)
            flat[i] = orig - step
            minus = _scalar(fn)
            flat[i] = orig
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * step)
        err = np.abs(analytic - numeric)
        scale = np.abs(analytic) + np.abs(numeric)
        rel = err / (scale + DENOM_EPS)
        if floor is not None:
            floored = err / np.maximum(scale, floor)
            report.floored_errors[p.name] = float(floored.max()) if floored.size else 0.0
        report.analytic[p.name] = analytic
        report.numeric[p.name] = numeric
        report.rel_errors[p.name] = rel
        report.max_rel_error[p.name] = float(rel.max()) if rel.size else 0.0
    zero_grad(params)
    return report
