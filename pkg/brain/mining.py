# brain/mining.py
"""
Triplet mining inside one batch.

Strategies (anchor modality / positive modality / negative modality):
    triplet         (A, V, V) and (V, A, A), every valid (a, p, n)
    hard_triplet    same patterns, one negative per (a, p): the closest to the anchor
    triplet_dagger  all 8 patterns over {audio, visual}

A positive shares at least one category with the anchor, a negative shares none.
The same sample in the same modality is never its own positive.
"""

import logging
from dataclasses import dataclass
from itertools import product
from typing import Iterator, List, Mapping, Optional, Tuple

import numpy as np

from data import AUDIO, VISUAL, other
from engine import ContractViolation

log = logging.getLogger(__name__)

STRATEGIES = ("triplet", "hard_triplet", "triplet_dagger")


@dataclass(frozen=True)
class TripletGroup:
    anchor_mod: str
    pos_mod: str
    neg_mod: str
    a: np.ndarray
    p: np.ndarray
    n: np.ndarray

    def __len__(self) -> int:
        return int(self.a.size)


@dataclass(frozen=True)
class TripletSet:
    strategy: str
    groups: Tuple[TripletGroup, ...]

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups)

    def __iter__(self) -> Iterator[Tuple[Tuple[int, str], Tuple[int, str], Tuple[int, str]]]:
        for g in self.groups:
            for a, p, n in zip(g.a.tolist(), g.p.tolist(), g.n.tolist()):
                yield (a, g.anchor_mod), (p, g.pos_mod), (n, g.neg_mod)


def overlap(labels) -> np.ndarray:
    """Boolean matrix: samples i and j share a category."""
    lab = np.asarray(labels, dtype=np.int64)
    return (lab @ lab.T) > 0


def patterns(strategy: str) -> List[Tuple[str, str, str]]:
    if strategy in ("triplet", "hard_triplet"):
        return [(AUDIO, VISUAL, VISUAL), (VISUAL, AUDIO, AUDIO)]
    if strategy == "triplet_dagger":
        return list(product((AUDIO, VISUAL), repeat=3))
    raise ContractViolation(f"unknown mining strategy {strategy!r}")


def _positives(same: np.ndarray, anchor_mod: str, pos_mod: str) -> np.ndarray:
    pos = same.copy()
    if anchor_mod == pos_mod:
        np.fill_diagonal(pos, False)
    return pos


def _all_negatives(pos: np.ndarray, neg: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    ap_a, ap_p = np.nonzero(pos)
    neg_lists = [np.flatnonzero(row) for row in neg]
    counts = np.array([neg_lists[a].size for a in ap_a], dtype=np.intp)
    keep = counts > 0
    ap_a, ap_p, counts = ap_a[keep], ap_p[keep], counts[keep]
    if not ap_a.size:
        empty = np.zeros(0, dtype=np.intp)
        return empty, empty, empty
    a = np.repeat(ap_a, counts)
    p = np.repeat(ap_p, counts)
    n = np.concatenate([neg_lists[i] for i in ap_a])
    return a, p, n


def _hardest_negatives(pos: np.ndarray, neg: np.ndarray, dist: np.ndarray):
    masked = np.where(neg, dist, np.inf)
    hardest = np.argmin(masked, axis=1)  # first index on ties
    has_neg = neg.any(axis=1)
    ap_a, ap_p = np.nonzero(pos & has_neg[:, None])
    return ap_a, ap_p, hardest[ap_a]


def mine_triplets(labels, strategy: str = "triplet",
                  distances: Optional[Mapping[Tuple[str, str], np.ndarray]] = None) -> TripletSet:
    """All triplets of one batch in ascending (a, p, n) order per modality pattern.

    `hard_triplet` needs `distances[(anchor_mod, neg_mod)]`, the squared distances
    between anchor embeddings and candidate negatives under the current parameters.
    """
    same = overlap(labels)
    neg = ~same
    groups = []
    for am, pm, nm in patterns(strategy):
        pos = _positives(same, am, pm)
        if strategy == "hard_triplet":
            if distances is None or (am, nm) not in distances:
                raise ContractViolation(f"hard_triplet mining needs distances for ({am}, {nm})")
            a, p, n = _hardest_negatives(pos, neg, np.asarray(distances[(am, nm)]))
        else:
            a, p, n = _all_negatives(pos, neg)
        if a.size:
            groups.append(TripletGroup(am, pm, nm, a.astype(np.intp), p.astype(np.intp), n.astype(np.intp)))
    ts = TripletSet(strategy, tuple(groups))
    if not len(ts):
        log.warning("no valid %s triplet in a batch of %d; metric loss contributes 0",
                    strategy, same.shape[0])
    return ts


def cross_directions() -> List[Tuple[str, str]]:
    return [(AUDIO, other(AUDIO)), (VISUAL, other(VISUAL))]
