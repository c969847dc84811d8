# runners/trainer.py
"""
Deterministic training loop.

Per epoch: seeded shuffle -> per batch: forward both branches (dropout keyed by
(seed, epoch, batch)) -> correlation graphs -> AA proxies -> total loss ->
backward -> optimizer step. Everything emitted is a function of (seed, config, data).

Public API:
    train(train_set, test_set, cfg, run_dir=None, resume=None) -> TrainResult
    sweep_k(train_set, test_set, cfg, k_values, strategies) -> list of rows
"""

import copy
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from brain.attention import attention_sets, unique_parameters
from brain.graph import CorrelationGraph, NeighborList, build_correlation_graph
from brain.losses import LossConfig, LossKind, compute_proxies, total_loss
from brain.mining import STRATEGIES
from brain.networks import DEFAULT_DROPOUT, DEFAULT_HIDDEN, BranchPair, ProjectionNet, forward
from data import AUDIO, MODALITIES, VISUAL, Dataset, make_batches, other
from engine import NumericError, Tape, Tensor
from tools.filegen import graph_csv, trace_csv
from tools.metrics import EvalResult, evaluate
from .checkpoint import (CheckpointError, fingerprint, meta_value, pack_state, read_tensors,
                         restore_params, write_tensors)
from .optim import AdamState, adam_step, clip_grad_norm, sgd_step

log = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.aadm"
TRACE_FILE = "trace.csv"
GRAPH_FILE = "graph.csv"


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss or gradient; the last good state was kept."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


class Optimizer(str, Enum):
    adam = "adam"
    sgd = "sgd"


class GraphScope(str, Enum):
    per_batch = "per_batch"
    per_epoch_full = "per_epoch_full"


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(400, ge=1)
    batch_size: int = Field(200, ge=2)
    lr: float = Field(1e-4, gt=0)
    optimizer: Optimizer = Optimizer.adam
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    seed: int = 0
    k: int = Field(3, ge=1)
    heads: int = Field(1, ge=1)
    hidden: int = Field(DEFAULT_HIDDEN, ge=1)
    dropout: float = Field(DEFAULT_DROPOUT, ge=0, lt=1)
    loss: LossConfig = Field(default_factory=LossConfig)
    graph_scope: GraphScope = GraphScope.per_batch
    cross_modal_neighbors: bool = False
    per_modality_attention: bool = False
    clip_norm: Optional[float] = Field(None, gt=0)
    eval_every: int = Field(10, ge=0)
    eval_with_proxies: bool = False
    dump_graph: bool = False

    @model_validator(mode="after")
    def _proxy_eval_needs_aa(self):
        if self.eval_with_proxies and not self.loss.use_aa:
            raise ValueError("eval_with_proxies requires loss.use_aa")
        return self


# ---------- model ----------
@dataclass
class AVModel:
    nets: BranchPair
    attn: Dict[str, object]
    heads: int
    per_modality_attention: bool

    @classmethod
    def initialize(cls, audio_dim: int, visual_dim: int, c: int, cfg: TrainConfig) -> "AVModel":
        if c % cfg.heads:
            raise ValueError(f"heads={cfg.heads} must divide the category count c={c}")
        nets = BranchPair(
            ProjectionNet.initialize(AUDIO, audio_dim, c, cfg.hidden, cfg.dropout, seed=[cfg.seed, 1]),
            ProjectionNet.initialize(VISUAL, visual_dim, c, cfg.hidden, cfg.dropout, seed=[cfg.seed, 2]),
        )
        attn = attention_sets(c, cfg.heads, cfg.seed, MODALITIES, cfg.per_modality_attention)
        return cls(nets, attn, cfg.heads, cfg.per_modality_attention)

    @property
    def c(self) -> int:
        return self.nets.audio.c

    def parameters(self):
        return self.nets.parameters() + unique_parameters(self.attn)

    def architecture(self) -> Dict[str, object]:
        return {"audio": self.nets.audio.architecture(), "visual": self.nets.visual.architecture(),
                "heads": self.heads, "per_modality_attention": self.per_modality_attention}

    def fingerprint(self) -> int:
        return fingerprint(self.architecture())

    def project(self, dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        """Eval-mode label-space projections of a whole split."""
        return (forward(self.nets.audio, dataset.audio, train_mode=False).data,
                forward(self.nets.visual, dataset.visual, train_mode=False).data)


def model_for(dataset: Dataset, cfg: TrainConfig) -> AVModel:
    return AVModel.initialize(dataset.audio_dim, dataset.visual_dim, dataset.categories, cfg)


# ---------- checkpoints ----------
def save_checkpoint(path, model: AVModel, adam: Optional[AdamState], epoch: int, step: int) -> Path:
    meta = {"epoch": epoch, "step": step, "fingerprint": model.fingerprint()}
    return write_tensors(path, pack_state(model.parameters(), adam, meta))


def load_checkpoint(path, model: AVModel) -> Tuple[Optional[AdamState], int, int]:
    """Restore parameters in place; returns (adam state or None, epoch, step)."""
    tensors = read_tensors(path)
    saved = meta_value(tensors, "fingerprint")
    if saved is None or int(saved) != model.fingerprint():
        raise CheckpointError(f"{path}: fingerprint mismatch, checkpoint was written for another model")
    params = model.parameters()
    restore_params(params, tensors, path)
    adam = None
    if any(k.startswith("adam.m/") for k in tensors):
        adam = AdamState(int(meta_value(tensors, "adam_t", 0)),
                         {p.name: tensors[f"adam.m/{p.name}"].copy() for p in params},
                         {p.name: tensors[f"adam.v/{p.name}"].copy() for p in params})
    return adam, int(meta_value(tensors, "epoch", 0)), int(meta_value(tensors, "step", 0))


# ---------- graphs ----------
def _batch_graphs(fa: Tensor, fv: Tensor, labels, cfg: TrainConfig):
    proj = {AUDIO: fa, VISUAL: fv}
    graphs, pools = {}, {}
    for m in MODALITIES:
        cand = proj[other(m)].data if cfg.cross_modal_neighbors else None
        graphs[m] = build_correlation_graph(proj[m].data, labels, cfg.k, m, candidate_embeddings=cand)
        if cfg.cross_modal_neighbors:
            pools[m] = proj[other(m)]
    return graphs, pools or None


def _full_graphs(model: AVModel, train_set: Dataset, cfg: TrainConfig):
    fa, fv = model.project(train_set)
    proj = {AUDIO: fa, VISUAL: fv}
    graphs, pools = {}, {}
    for m in MODALITIES:
        pool = proj[other(m)] if cfg.cross_modal_neighbors else proj[m]
        graphs[m] = build_correlation_graph(proj[m], train_set.labels, cfg.k, m,
                                            candidate_embeddings=pool if cfg.cross_modal_neighbors else None)
        pools[m] = Tensor(pool)
    return graphs, pools


def restrict_graph(full: CorrelationGraph, idx: np.ndarray) -> CorrelationGraph:
    """Batch view of a whole-set graph: anchors renumbered, neighbors keep whole-set indices."""
    neighbors = tuple(
        NeighborList(b, (b,) + full.neighbors[i].indices[1:], full.neighbors[i].scores,
                     full.neighbors[i].truncated)
        for b, i in enumerate(idx.tolist()))
    sub = full.adjacency[np.ix_(idx, idx)]
    return CorrelationGraph(full.modality, sub, neighbors, full.k, full.cross_modal)


# ---------- evaluation ----------
def evaluate_model(model: AVModel, test_set: Dataset, cfg: TrainConfig) -> EvalResult:
    fa, fv = model.project(test_set)
    if cfg.eval_with_proxies:
        graphs = {AUDIO: build_correlation_graph(fa, test_set.labels, cfg.k, AUDIO),
                  VISUAL: build_correlation_graph(fv, test_set.labels, cfg.k, VISUAL)}
        proxies = compute_proxies({AUDIO: Tensor(fa), VISUAL: Tensor(fv)}, graphs, model.attn,
                                  cfg.loss.aa_mode)
        fa, fv = proxies[AUDIO].data, proxies[VISUAL].data
    return evaluate(fa, fv, test_set.labels)


# ---------- training ----------
@dataclass
class TrainResult:
    model: AVModel
    adam: Optional[AdamState]
    trace: List[Dict[str, object]] = field(default_factory=list)
    epochs_done: int = 0
    steps: int = 0
    last_graphs: Optional[Dict[str, CorrelationGraph]] = None


def _snapshot(model: AVModel, adam: Optional[AdamState]):
    return [p.data.copy() for p in model.parameters()], copy.deepcopy(adam)


def _rollback(model: AVModel, snap):
    for p, data in zip(model.parameters(), snap[0]):
        p.data[...] = data


def _step(model: AVModel, train_set: Dataset, idx: np.ndarray, cfg: TrainConfig, step_seed,
          full=None):
    labels = train_set.labels[idx]
    params = model.parameters()
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        fa = forward(model.nets.audio, train_set.audio[idx], True, seed=step_seed + [0])
        fv = forward(model.nets.visual, train_set.visual[idx], True, seed=step_seed + [1])
        graphs = pools = None
        if cfg.loss.use_aa:
            if full is None:
                graphs, pools = _batch_graphs(fa, fv, labels, cfg)
            else:
                graphs = {m: restrict_graph(full[0][m], idx) for m in MODALITIES}
                pools = full[1]
        terms = total_loss({AUDIO: fa, VISUAL: fv}, labels, cfg.loss, graphs, model.attn, pools)
    tape.backward(terms.total)
    if cfg.clip_norm is not None:
        clip_grad_norm(params, cfg.clip_norm)
    return terms, graphs


def train(train_set: Dataset, test_set: Optional[Dataset], cfg: TrainConfig,
          run_dir: Optional[Path] = None, resume: Optional[Path] = None,
          model: Optional[AVModel] = None) -> TrainResult:
    if len(train_set) < 2:
        raise ValueError(f"training split has {len(train_set)} pairs, need at least 2")
    model = model or model_for(train_set, cfg)
    params = model.parameters()
    adam = AdamState.zeros(params) if cfg.optimizer is Optimizer.adam else None
    start, steps = 0, 0
    if resume is not None:
        loaded, start, steps = load_checkpoint(resume, model)
        if cfg.optimizer is Optimizer.adam:
            if loaded is None:
                raise CheckpointError(f"{resume}: no optimizer moments to resume Adam from")
            adam = loaded
        log.info("resumed from %s at epoch %d", resume, start)

    result = TrainResult(model, adam, epochs_done=start, steps=steps)
    good = _snapshot(model, adam)
    for epoch in range(start, cfg.epochs):
        full = _full_graphs(model, train_set, cfg) \
            if cfg.loss.use_aa and cfg.graph_scope is GraphScope.per_epoch_full else None
        totals, labels_, metrics_ = [], [], []
        for b, idx in enumerate(make_batches(train_set, cfg.batch_size, cfg.seed, epoch)):
            try:
                terms, graphs = _step(model, train_set, idx, cfg, [cfg.seed, epoch, b], full)
                if cfg.optimizer is Optimizer.adam:
                    adam_step(params, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
                else:
                    sgd_step(params, cfg.lr)
            except NumericError as e:
                _rollback(model, good)
                result.adam = good[1]
                if run_dir is not None:
                    save_checkpoint(Path(run_dir) / CHECKPOINT_FILE, model, good[1], result.epochs_done, result.steps)
                raise TrainingAborted(f"epoch {epoch + 1}, batch {b}: {e}", epoch + 1) from e
            steps += 1
            totals.append(terms.total.item())
            labels_.append(terms.label.item())
            metrics_.append(terms.metric.item())
            result.last_graphs = graphs

        row = {"epoch": epoch + 1, "mean_total_loss": float(np.mean(totals)),
               "mean_label_loss": float(np.mean(labels_)), "mean_metric_loss": float(np.mean(metrics_)),
               "test_map_av": None, "test_map_va": None}
        last = epoch + 1 == cfg.epochs
        if test_set is not None and cfg.eval_every and ((epoch + 1) % cfg.eval_every == 0 or last):
            res = evaluate_model(model, test_set, cfg)
            row["test_map_av"], row["test_map_va"] = res.a2v.map, res.v2a.map
            log.info("epoch %d: loss %.6f (label %.6f, metric %.6f) MAP A->V %.4f V->A %.4f",
                     epoch + 1, row["mean_total_loss"], row["mean_label_loss"], row["mean_metric_loss"],
                     res.a2v.map, res.v2a.map)
        else:
            log.info("epoch %d: loss %.6f (label %.6f, metric %.6f)", epoch + 1,
                     row["mean_total_loss"], row["mean_label_loss"], row["mean_metric_loss"])
        result.trace.append(row)
        result.epochs_done, result.steps = epoch + 1, steps
        good = _snapshot(model, adam)

    result.adam = adam
    if run_dir is not None:
        run_dir = Path(run_dir)
        save_checkpoint(run_dir / CHECKPOINT_FILE, model, adam, result.epochs_done, result.steps)
        trace_csv(result.trace, run_dir, TRACE_FILE)
        if cfg.dump_graph and result.last_graphs:
            graph_csv(result.last_graphs[AUDIO].edges(), run_dir, f"{AUDIO}_{GRAPH_FILE}")
            graph_csv(result.last_graphs[VISUAL].edges(), run_dir, f"{VISUAL}_{GRAPH_FILE}")
    return result


# ---------- k sweep ----------
def _sweep_job(job) -> Dict[str, object]:
    train_set, test_set, cfg, strategy, k = job
    run_cfg = cfg.model_copy(update={"k": k, "loss": cfg.loss.model_copy(update={"kind": LossKind(strategy)})})
    res = train(train_set, None, run_cfg)
    ev = evaluate_model(res.model, test_set, run_cfg)
    log.info("sweep %s k=%d: MAP A->V %.4f V->A %.4f", strategy, k, ev.a2v.map, ev.v2a.map)
    return {"strategy": strategy, "k": k, "map_av": ev.a2v.map, "map_va": ev.v2a.map, "map_avg": ev.average}


def sweep_k(train_set: Dataset, test_set: Dataset, cfg: TrainConfig,
            k_values: Sequence[int] = range(1, 8), strategies: Sequence[str] = STRATEGIES,
            parallel_runs: int = 1) -> List[Dict[str, object]]:
    """One full training run per (strategy, k); rows come back in (strategy, k) order."""
    k_values = list(k_values)
    if not k_values:
        raise ValueError("sweep_k needs at least one k")
    jobs = [(train_set, test_set, cfg, s, k) for s in strategies for k in k_values]
    if parallel_runs > 1:
        with ProcessPoolExecutor(max_workers=parallel_runs) as ex:
            return list(ex.map(_sweep_job, jobs))
    return [_sweep_job(j) for j in jobs]
