# brain/networks.py
"""Two-branch projection stacks: raw audio / visual features -> label space (width c)."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from engine import ContractViolation, Parameter, Tensor, ops

log = logging.getLogger(__name__)

HIDDEN_LAYERS = 3
DEFAULT_HIDDEN = 1024
DEFAULT_DROPOUT = 0.1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ProjectionNet:
    modality: str
    d_in: int
    c: int
    hidden: int = DEFAULT_HIDDEN
    dropout: float = DEFAULT_DROPOUT
    weights: List[Parameter] = field(default_factory=list)
    biases: List[Parameter] = field(default_factory=list)

    @classmethod
    def initialize(cls, modality: str, d_in: int, c: int, hidden: int = DEFAULT_HIDDEN,
                   dropout: float = DEFAULT_DROPOUT, seed: int = 0) -> "ProjectionNet":
        if d_in < 1 or c < 1 or hidden < 1:
            raise ContractViolation(f"ProjectionNet dims must be >= 1, got d_in={d_in} c={c} hidden={hidden}")
        net = cls(modality, d_in, c, hidden, dropout)
        rng = np.random.default_rng(seed)
        widths = net.widths
        for layer, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            net.weights.append(Parameter(glorot_uniform(rng, fan_in, fan_out), f"{modality}.fc{layer}.w"))
            net.biases.append(Parameter(np.zeros(fan_out), f"{modality}.fc{layer}.b"))
        log.debug("%s branch initialized with widths %s", modality, widths)
        return net

    @property
    def widths(self) -> List[int]:
        return [self.d_in] + [self.hidden] * HIDDEN_LAYERS + [self.c]

    def parameters(self) -> List[Parameter]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def architecture(self) -> Dict[str, object]:
        return {"modality": self.modality, "d_in": self.d_in, "c": self.c,
                "hidden": self.hidden, "layers": HIDDEN_LAYERS + 1}


def forward(net: ProjectionNet, x, train_mode: bool = False, seed=0) -> Tensor:
    """ReLU + dropout after each hidden layer, linear output layer.

    Dropout masks are keyed by (seed, layer) so a training step is reproducible.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 2 or x.shape[1] != net.d_in:
        raise ContractViolation(
            f"{net.modality} branch expects input of width {net.d_in}, got shape {x.shape}")
    h = x
    last = len(net.weights) - 1
    for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = ops.bias_add(ops.matmul(h, w), b)
        if layer < last:
            h = ops.relu(h)
            h = ops.dropout(h, net.dropout, train_mode, seed=_layer_seed(seed, layer))
    return h


def _layer_seed(seed, layer: int) -> List[int]:
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + [layer]


@dataclass
class BranchPair:
    """The audio and visual projection nets trained together."""
    audio: ProjectionNet
    visual: ProjectionNet

    def __getitem__(self, modality: str) -> ProjectionNet:
        if modality == self.audio.modality:
            return self.audio
        if modality == self.visual.modality:
            return self.visual
        raise ContractViolation(f"no branch for modality {modality!r}")

    def parameters(self) -> List[Parameter]:
        return self.audio.parameters() + self.visual.parameters()
