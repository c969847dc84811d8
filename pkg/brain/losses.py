# brain/losses.py
"""
Training objective: label regression + one metric loss over AA proxies.

    Loss = (1/n)||f_a - Y||_F + (1/n)||f_v - Y||_F + metric

Metric losses (means over triplets / pairs; `anchors` may be AA proxies, `others`
are proxies with scope all_terms and raw projections with scope anchor_only):

    triplet family  [ ||a - p||^2 - ||a - n||^2 + margin ]_+
    contrastive     y * D^2/2 + (1 - y) * [m - D]_+^2/2          (D = ||a - b||)
    n_pair          log(1 + sum_neg exp(a.g_n - a.g_i))          (g_i = cross-modal partner)
    angular         [ ||a - p||^2 - 4 tan^2(alpha) ||n - (a + p)/2||^2 ]_+
    hinge           y * D + (1 - y) * [m - D]_+
    dsl             -log softmax_j( S_ij * n * softmax_col(t * S)_ij )_ii, S = A G^T

Cross-modal losses are computed once per direction (audio->visual, visual->audio)
and averaged.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Mapping, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from data import AUDIO, VISUAL
from engine import ContractViolation, Tensor, as_tensor, ops
from .attention import AAMode, AttentionParams, modality_proxies
from .graph import CorrelationGraph
from .mining import STRATEGIES, cross_directions, mine_triplets, overlap

log = logging.getLogger(__name__)

PAIR_EPS = 1e-12


class LossKind(str, Enum):
    triplet = "triplet"
    triplet_dagger = "triplet_dagger"
    hard_triplet = "hard_triplet"
    contrastive = "contrastive"
    n_pair = "n_pair"
    angular = "angular"
    hinge = "hinge"
    dsl = "dsl"


ZOO = (LossKind.n_pair, LossKind.angular, LossKind.hinge, LossKind.dsl)


class AAScope(str, Enum):
    all_terms = "all_terms"
    anchor_only = "anchor_only"


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: LossKind = LossKind.triplet
    margin: float = Field(1.2, gt=0)
    contrastive_margin: float = Field(1.0, gt=0)
    scope: AAScope = AAScope.all_terms
    aa_mode: AAMode = AAMode.joint
    use_aa: bool = True
    contrastive_printed: bool = False
    angular_degrees: float = Field(45.0, gt=0, lt=90)
    dsl_temperature: float = Field(10.0, gt=0)


@dataclass
class LossTerms:
    total: Tensor
    label: Tensor
    metric: Tensor
    count: int = 0


def _zero() -> Tensor:
    return ops.zeros_scalar()


def _check_pair(anchors: Mapping[str, Tensor], others: Mapping[str, Tensor]):
    for m in (AUDIO, VISUAL):
        if m not in anchors or m not in others:
            raise ContractViolation(f"metric loss needs {m} embeddings")


# ---------- label regression ----------
def label_loss(proj_a, proj_v, labels) -> Tensor:
    proj_a, proj_v = as_tensor(proj_a), as_tensor(proj_v)
    y = np.asarray(labels, dtype=np.float64)
    if proj_a.shape != y.shape or proj_v.shape != y.shape:
        raise ContractViolation(
            f"label_loss: projections {proj_a.shape} / {proj_v.shape} vs labels {y.shape}")
    n = float(y.shape[0])
    return ops.frobenius_norm(proj_a - y) / n + ops.frobenius_norm(proj_v - y) / n


# ---------- triplet family ----------
def aa_triplet_loss(anchors: Mapping[str, Tensor], others: Mapping[str, Tensor],
                    triplets, margin: float) -> Tensor:
    if margin <= 0:
        raise ContractViolation(f"triplet margin must be > 0, got {margin}")
    _check_pair(anchors, others)
    count = len(triplets)
    if count == 0:
        return _zero()
    total = None
    for g in triplets.groups:
        d_ap = ops.gather(ops.pairwise_sqdist(anchors[g.anchor_mod], others[g.pos_mod]), g.a, g.p)
        d_an = ops.gather(ops.pairwise_sqdist(anchors[g.anchor_mod], others[g.neg_mod]), g.a, g.n)
        s = ops.sum_all(ops.hinge(d_ap - d_an + margin))
        total = s if total is None else total + s
    return total / float(count)


def _distances(anchors: Mapping[str, Tensor], others: Mapping[str, Tensor]) -> Dict:
    out = {}
    for am in (AUDIO, VISUAL):
        for nm in (AUDIO, VISUAL):
            a, b = anchors[am].data, others[nm].data
            diff = a[:, None, :] - b[None, :, :]
            out[(am, nm)] = (diff * diff).sum(axis=2)
    return out


# ---------- pairwise losses ----------
def _pair_distance(anchors, others, am, om) -> Tensor:
    return ops.sqrt(ops.pairwise_sqdist(anchors[am], others[om]), PAIR_EPS)


def aa_contrastive_loss(anchors: Mapping[str, Tensor], others: Mapping[str, Tensor], labels,
                        margin: float, printed: bool = False) -> Tensor:
    """Mean over all cross-modal pairs. `printed` swaps which pairs attract."""
    if margin <= 0:
        raise ContractViolation(f"contrastive margin must be > 0, got {margin}")
    _check_pair(anchors, others)
    y = overlap(labels).astype(np.float64)
    if printed:
        y = 1.0 - y
    total = None
    for am, om in cross_directions():
        sq = ops.pairwise_sqdist(anchors[am], others[om])
        d = ops.sqrt(sq, PAIR_EPS)
        push = ops.hinge(margin - d)
        term = ops.mean(y * sq * 0.5 + (1.0 - y) * push * push * 0.5)
        total = term if total is None else total + term
    return total / 2.0


def hinge_loss(anchors, others, labels, margin: float) -> Tensor:
    _check_pair(anchors, others)
    y = overlap(labels).astype(np.float64)
    total = None
    for am, om in cross_directions():
        d = _pair_distance(anchors, others, am, om)
        term = ops.mean(y * d + (1.0 - y) * ops.hinge(margin - d))
        total = term if total is None else total + term
    return total / 2.0


def n_pair_loss(anchors, others, labels) -> Tensor:
    _check_pair(anchors, others)
    neg = (~overlap(labels)).astype(np.float64)
    valid = np.flatnonzero(neg.sum(axis=1) > 0)
    if not valid.size:
        log.warning("n_pair: no anchor has a negative in this batch; skipped")
        return _zero()
    n = neg.shape[0]
    diag = np.arange(n)
    total = None
    for am, om in cross_directions():
        s = ops.matmul(anchors[am], ops.transpose(others[om]))
        # rel[i, j] = s[i, j] - s[i, i]
        rel = ops.transpose(ops.transpose(s) - ops.gather(s, diag, diag))
        summed = ops.row_sum(ops.exp(rel) * neg)
        term = ops.mean(ops.take_rows(ops.log(summed + 1.0), valid))
        total = term if total is None else total + term
    return total / 2.0


def angular_loss(anchors, others, labels, degrees: float) -> Tensor:
    triplets = mine_triplets(labels, "triplet")
    if not len(triplets):
        log.warning("angular: no triplet in this batch; skipped")
        return _zero()
    tan2 = float(np.tan(np.deg2rad(degrees)) ** 2)
    total = None
    for g in triplets.groups:
        a = ops.take_rows(anchors[g.anchor_mod], g.a)
        p = ops.take_rows(others[g.pos_mod], g.p)
        n = ops.take_rows(others[g.neg_mod], g.n)
        center = (a + p) * 0.5
        arg = ops.sqdist_rows(a, p) - ops.sqdist_rows(n, center) * (4.0 * tan2)
        s = ops.sum_all(ops.hinge(arg))
        total = s if total is None else total + s
    return total / float(len(triplets))


def _col_softmax(x: Tensor) -> Tensor:
    return ops.transpose(ops.softmax_rows(ops.transpose(x)))


def dsl_loss(anchors, others, temperature: float) -> Tensor:
    _check_pair(anchors, others)
    n = anchors[AUDIO].shape[0]
    diag = np.arange(n)
    total = None
    for am, om in cross_directions():
        s = ops.matmul(anchors[am], ops.transpose(others[om]))
        prior = _col_softmax(s * temperature)
        logp = ops.log_softmax_rows(s * prior * float(n))
        term = -ops.mean(ops.gather(logp, diag, diag))
        total = term if total is None else total + term
    return total / 2.0


def zoo_loss(kind, anchors, others, labels, cfg: LossConfig) -> Tensor:
    kind = LossKind(kind)
    if kind is LossKind.n_pair:
        return n_pair_loss(anchors, others, labels)
    if kind is LossKind.angular:
        return angular_loss(anchors, others, labels, cfg.angular_degrees)
    if kind is LossKind.hinge:
        return hinge_loss(anchors, others, labels, cfg.contrastive_margin)
    if kind is LossKind.dsl:
        return dsl_loss(anchors, others, cfg.dsl_temperature)
    raise ContractViolation(f"{kind.value} is not a zoo loss")


def metric_loss(anchors, others, labels, cfg: LossConfig):
    """(loss, number of triplets or pairs it averaged over)."""
    kind = LossKind(cfg.kind)
    if kind.value in STRATEGIES:
        distances = _distances(anchors, others) if kind is LossKind.hard_triplet else None
        triplets = mine_triplets(labels, kind.value, distances)
        return aa_triplet_loss(anchors, others, triplets, cfg.margin), len(triplets)
    n = np.asarray(labels).shape[0]
    if kind is LossKind.contrastive:
        return aa_contrastive_loss(anchors, others, labels, cfg.contrastive_margin,
                                   cfg.contrastive_printed), n * n
    return zoo_loss(kind, anchors, others, labels, cfg), n


# ---------- composition ----------
def compute_proxies(projections: Mapping[str, Tensor], graphs: Mapping[str, CorrelationGraph],
                    attn: Mapping[str, AttentionParams], mode: AAMode,
                    pools: Optional[Mapping[str, Tensor]] = None) -> Dict[str, Tensor]:
    """AA proxies for both modalities; the partner is always the other modality."""
    pools = pools or {}
    return {
        AUDIO: modality_proxies(projections[AUDIO], projections[VISUAL], graphs[AUDIO],
                                attn[AUDIO], mode, pools.get(AUDIO)),
        VISUAL: modality_proxies(projections[VISUAL], projections[AUDIO], graphs[VISUAL],
                                 attn[VISUAL], mode, pools.get(VISUAL)),
    }


def total_loss(projections: Mapping[str, Tensor], labels, cfg: LossConfig,
               graphs: Optional[Mapping[str, CorrelationGraph]] = None,
               attn: Optional[Mapping[str, AttentionParams]] = None,
               pools: Optional[Mapping[str, Tensor]] = None) -> LossTerms:
    label = label_loss(projections[AUDIO], projections[VISUAL], labels)
    if cfg.use_aa:
        if graphs is None or attn is None:
            raise ContractViolation("total_loss: AA proxies need graphs and attention parameters")
        proxies = compute_proxies(projections, graphs, attn, cfg.aa_mode, pools)
        anchors = proxies
        others = proxies if AAScope(cfg.scope) is AAScope.all_terms else projections
    else:
        anchors = others = projections
    metric, count = metric_loss(anchors, others, labels, cfg)
    return LossTerms(total=label + metric, label=label, metric=metric, count=count)
