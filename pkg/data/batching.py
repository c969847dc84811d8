# data/batching.py
"""Seeded mini-batch plans. The permutation depends only on (seed, epoch)."""

from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import BatchingError


@dataclass(frozen=True)
class BatchPlan:
    seed: int
    batch_size: int
    epoch: int
    order: np.ndarray
    batches: List[np.ndarray]

    def __iter__(self):
        return iter(self.batches)

    def __len__(self) -> int:
        return len(self.batches)


def plan_epoch(n: int, batch_size: int, seed: int, epoch: int) -> BatchPlan:
    if n < 2:
        raise BatchingError(f"need at least 2 samples to batch, got {n}")
    if batch_size < 2:
        raise BatchingError(f"batch size must be >= 2, got {batch_size}")
    order = np.random.default_rng([seed, epoch]).permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    # a trailing batch of one has no negative candidates
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return BatchPlan(seed, batch_size, epoch, order, batches)


def make_batches(dataset, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """Index batches for one epoch; `dataset` may be a Dataset or a sample count."""
    n = dataset if isinstance(dataset, (int, np.integer)) else len(dataset)
    return plan_epoch(int(n), batch_size, seed, epoch).batches
