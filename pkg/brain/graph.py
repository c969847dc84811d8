# brain/graph.py
"""
Correlation graph over label-space embeddings.

- cosine similarity, ranked neighbors (ties -> ascending index)
- same-category k-NN per anchor; the anchor is always its own first neighbor,
  so k counts the anchor plus k-1 others
- union-symmetrized binary adjacency

Public API:
    build_correlation_graph(embeddings, labels, k, ...) -> CorrelationGraph
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from engine import ContractViolation

log = logging.getLogger(__name__)

WORKERS = int(os.getenv("AVFORGE_WORKERS", "1"))


class SimilarityError(ValueError):
    """Cosine similarity is undefined for the given vectors."""


def cosine_similarity(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise SimilarityError(f"dimension mismatch {x.shape} vs {y.shape}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise SimilarityError("zero-norm vector has no direction")
    return float(np.clip(np.dot(x, y) / (nx * ny), -1.0, 1.0))


def rank_neighbors(q_index: int, candidate_indices: Sequence[int], embeddings,
                   query=None) -> List[int]:
    """Candidates sorted by descending cosine similarity to the query row."""
    cands = [int(i) for i in candidate_indices]
    if not cands:
        raise ContractViolation("rank_neighbors: no candidates")
    emb = np.asarray(embeddings, dtype=np.float64)
    q = emb[q_index] if query is None else np.asarray(query, dtype=np.float64)
    sims = [cosine_similarity(q, emb[i]) for i in cands]
    return [i for _, i in sorted(zip(sims, cands), key=lambda t: (-t[0], t[1]))]


def _cosine_rows(q: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Cosine of q against every pool row; zero norms score -inf."""
    nq = np.linalg.norm(q)
    npool = np.linalg.norm(pool, axis=1)
    sims = np.full(pool.shape[0], -np.inf)
    if nq == 0:
        return sims
    ok = npool > 0
    sims[ok] = (pool[ok] @ q) / (npool[ok] * nq)
    return sims


def _compatible(labels: np.ndarray, anchor_labels: np.ndarray) -> np.ndarray:
    return (labels.astype(np.int64) @ anchor_labels.astype(np.int64)) > 0


@dataclass(frozen=True)
class NeighborList:
    anchor: int
    indices: Tuple[int, ...]
    scores: Tuple[float, ...]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.indices)


def knn_select(q_index: int, k: int, embeddings, labels,
               candidate_embeddings=None, candidate_labels=None) -> NeighborList:
    """Anchor first, then the top k-1 category-compatible candidates.

    With `candidate_embeddings` the candidates come from that pool (the
    cross-modal reading): pool row q_index is the anchor's own partner and is
    excluded, the anchor itself still leads the list.
    """
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    q = emb[q_index]
    pool = emb if candidate_embeddings is None else np.asarray(candidate_embeddings, dtype=np.float64)
    pool_labels = lab if candidate_labels is None else np.asarray(candidate_labels)

    sims = _cosine_rows(q, pool)
    eligible = _compatible(pool_labels, lab[q_index]) & np.isfinite(sims)
    eligible[q_index] = False
    cand = np.flatnonzero(eligible)
    # descending similarity, ties by ascending index
    order = cand[np.lexsort((cand, -sims[cand]))]
    chosen = order[:k - 1]

    self_score = 1.0 if np.linalg.norm(q) > 0 else 0.0
    truncated = len(chosen) < k - 1
    if truncated:
        log.debug("anchor %d: only %d compatible neighbors for k=%d", q_index, len(chosen), k)
    return NeighborList(
        anchor=int(q_index),
        indices=(int(q_index),) + tuple(int(i) for i in chosen),
        scores=(self_score,) + tuple(float(sims[i]) for i in chosen),
        truncated=truncated,
    )


@dataclass(frozen=True)
class CorrelationGraph:
    modality: str
    adjacency: np.ndarray
    neighbors: Tuple[NeighborList, ...]
    k: int
    cross_modal: bool = False

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def edges(self) -> List[Tuple[int, int]]:
        """(p, q) for every 1-entry, row-major."""
        p, q = np.nonzero(self.adjacency)
        return list(zip(p.tolist(), q.tolist()))


def build_correlation_graph(embeddings, labels, k: int, modality: str = "",
                            candidate_embeddings=None, workers: Optional[int] = None) -> CorrelationGraph:
    emb = np.asarray(embeddings, dtype=np.float64)
    lab = np.asarray(labels)
    n = emb.shape[0]
    if n < 1:
        raise ContractViolation("build_correlation_graph: no samples")
    if lab.shape[0] != n:
        raise ContractViolation(f"build_correlation_graph: {n} embeddings but {lab.shape[0]} label rows")
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")

    def one(i):
        return knn_select(i, k, emb, lab, candidate_embeddings=candidate_embeddings)

    workers = WORKERS if workers is None else workers
    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            neighbors = tuple(ex.map(one, range(n)))
    else:
        neighbors = tuple(one(i) for i in range(n))

    adj = np.zeros((n, n), dtype=np.uint8)
    for nl in neighbors:
        adj[nl.anchor, list(nl.indices)] = 1
    adj |= adj.T
    adj.setflags(write=False)
    return CorrelationGraph(modality=modality, adjacency=adj, neighbors=neighbors, k=k,
                            cross_modal=candidate_embeddings is not None)
