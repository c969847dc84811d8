# runners/optim.py
"""
Optimizers over named Parameters.

    m = b1*m + (1-b1)*g ; v = b2*v + (1-b2)*g^2
    p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from engine import NumericError, Parameter

log = logging.getLogger(__name__)


def _check_finite(params: Sequence[Parameter]):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NumericError(f"non-finite gradient for parameter {p.name!r}; step aborted")


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm. Returns the norm before."""
    _check_finite(params)
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params)))
    if total > max_norm > 0:
        scale = max_norm / total
        for p in params:
            p.grad *= scale
    return total


@dataclass
class AdamState:
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Sequence[Parameter]) -> "AdamState":
        return cls(0, {p.name: np.zeros_like(p.data) for p in params},
                   {p.name: np.zeros_like(p.data) for p in params})


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float,
              b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, in place. Gradients are read from p.grad."""
    _check_finite(params)
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad
        m = state.m.setdefault(p.name, np.zeros_like(p.data))
        v = state.v.setdefault(p.name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def sgd_step(params: Sequence[Parameter], lr: float):
    _check_finite(params)
    for p in params:
        p.data -= lr * p.grad
