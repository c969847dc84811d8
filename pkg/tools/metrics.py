# tools/metrics.py
"""
Cross-modal retrieval evaluation.

Queries from one modality rank the whole gallery of the other modality by cosine
similarity (ties -> lower index first). An item is relevant when it shares a
category with the query.

Public API:
    evaluate(audio_proj, visual_proj, labels) -> EvalResult   (A->V, V->A, average MAP)
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

WORKERS = int(os.getenv("AVFORGE_WORKERS", "1"))
K_GRID = (10, 20, 50, 100, 200, 500, 1000)


class EvaluationError(RuntimeError):
    """Retrieval cannot be evaluated on the given split."""


def rank_gallery(query, gallery) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    g = np.asarray(gallery, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != q.shape[0]:
        raise EvaluationError(f"query of length {q.shape[0]} vs gallery of shape {g.shape}")
    nq = np.linalg.norm(q)
    if nq == 0:
        log.warning("zero-norm query; gallery returned in index order")
        return np.arange(g.shape[0])
    ng = np.linalg.norm(g, axis=1)
    sims = np.full(g.shape[0], -np.inf)
    ok = ng > 0
    sims[ok] = (g[ok] @ q) / (ng[ok] * nq)
    return np.lexsort((np.arange(g.shape[0]), -sims))


def average_precision(relevance: Sequence[int]) -> Optional[float]:
    """Mean of precision@r over the relevant ranks r; None when nothing is relevant."""
    rel = np.asarray(relevance, dtype=np.float64)
    hits = rel.sum()
    if hits == 0:
        return None
    precision = np.cumsum(rel) / np.arange(1, rel.size + 1)
    return float((precision * rel).sum() / hits)


def precision_at_scope(relevance: Sequence[int], k_grid: Sequence[int] = K_GRID) -> Dict[int, float]:
    rel = np.asarray(relevance, dtype=np.float64)
    out = {}
    for k in k_grid:
        if k < 1:
            raise EvaluationError(f"K must be >= 1, got {k}")
        top = min(int(k), rel.size)
        out[int(k)] = float(rel[:top].sum() / top) if top else 0.0
    return out


@dataclass
class RetrievalReport:
    direction: str
    ap: List[Optional[float]]
    map: float
    precision: Dict[int, float]
    n_queries: int
    n_gallery: int

    @property
    def excluded(self) -> int:
        """Queries without any relevant gallery item."""
        return sum(a is None for a in self.ap)


@dataclass
class EvalResult:
    a2v: RetrievalReport
    v2a: RetrievalReport

    @property
    def average(self) -> float:
        return (self.a2v.map + self.v2a.map) / 2.0

    def summary(self) -> Tuple[float, float, float]:
        return self.a2v.map, self.v2a.map, self.average


def _query(i: int, queries: np.ndarray, gallery: np.ndarray, same: np.ndarray):
    order = rank_gallery(queries[i], gallery)
    rel = same[i, order]
    return average_precision(rel), rel


def retrieve(direction: str, queries, gallery, query_labels, gallery_labels,
             k_grid: Sequence[int] = K_GRID, workers: Optional[int] = None) -> RetrievalReport:
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if queries.shape[0] == 0 or gallery.shape[0] == 0:
        raise EvaluationError(f"{direction}: empty query set or gallery")
    same = (np.asarray(query_labels, dtype=np.int64) @ np.asarray(gallery_labels, dtype=np.int64).T) > 0
    same = same.astype(np.int64)

    def one(i):
        return _query(i, queries, gallery, same)

    workers = WORKERS if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(queries.shape[0])))
    else:
        results = [one(i) for i in range(queries.shape[0])]

    aps = [ap for ap, _ in results]
    scored = [ap for ap in aps if ap is not None]
    if not scored:
        raise EvaluationError(f"{direction}: no query has a relevant gallery item")
    if len(scored) < len(aps):
        log.warning("%s: %d of %d queries have no relevant item and are left out of MAP",
                    direction, len(aps) - len(scored), len(aps))
    grid = [k for k in k_grid if k <= gallery.shape[0]] or [gallery.shape[0]]
    tables = [precision_at_scope(rel, grid) for ap, rel in results if ap is not None]
    precision = {k: float(np.mean([t[k] for t in tables])) for k in grid}
    return RetrievalReport(direction, aps, float(np.mean(scored)), precision,
                           queries.shape[0], gallery.shape[0])


def evaluate(audio_proj, visual_proj, labels, k_grid: Sequence[int] = K_GRID,
             workers: Optional[int] = None) -> EvalResult:
    """Both retrieval directions over one split (queries and gallery share the labels)."""
    audio_proj = np.asarray(audio_proj)
    if audio_proj.shape[0] == 0:
        raise EvaluationError("empty test split")
    return EvalResult(
        a2v=retrieve("A->V", audio_proj, visual_proj, labels, labels, k_grid, workers),
        v2a=retrieve("V->A", visual_proj, audio_proj, labels, labels, k_grid, workers),
    )


def report_frame(result: EvalResult) -> pd.DataFrame:
    """Long table: one row per (direction, metric[, k]) value."""
    rows = []
    for rep in (result.a2v, result.v2a):
        rows.append({"direction": rep.direction, "metric": "map", "k": None, "value": rep.map})
        for i, ap in enumerate(rep.ap):
            if ap is not None:
                rows.append({"direction": rep.direction, "metric": f"ap[{i}]", "k": None, "value": ap})
        for k, p in rep.precision.items():
            rows.append({"direction": rep.direction, "metric": "precision", "k": k, "value": p})
    rows.append({"direction": "avg", "metric": "map", "k": None, "value": result.average})
    frame = pd.DataFrame(rows, columns=["direction", "metric", "k", "value"])
    frame["k"] = frame["k"].astype("Int64")
    return frame
