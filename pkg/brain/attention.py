# brain/attention.py
"""
Anchor-aware (AA) proxies.

For an anchor x_i with neighbor list [i, j, l, ...] and cross-modal partner y_i:

    joint   : AA(x_i) = Concat_h( softmax_theta(q_h . k_h,theta / sqrt(d_k)) @ (N W^V_h) ) W^O
              one softmax across the whole neighbor list, neighbors are keys and values
    literal : each tuple (y_i, n_theta, x_i) gets its own single-key softmax and the
              anchor as value; the tuple outputs are averaged over theta

Literal mode reduces to Concat_h(x_i W^V_h) W^O for every neighbor set and query;
with k=1 both modes coincide exactly.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from engine import ContractViolation, Parameter, Tensor, as_tensor, ops
from .graph import CorrelationGraph
from .networks import glorot_uniform

log = logging.getLogger(__name__)


class AAMode(str, Enum):
    literal = "literal"
    joint = "joint"


@dataclass
class AttentionParams:
    d: int
    heads: int
    w_q: List[Parameter] = field(default_factory=list)
    w_k: List[Parameter] = field(default_factory=list)
    w_v: List[Parameter] = field(default_factory=list)
    w_o: Optional[Parameter] = None
    seed: Union[int, Sequence[int]] = 0

    @classmethod
    def initialize(cls, d: int, heads: int = 1, seed: Union[int, Sequence[int]] = 0, prefix: str = "attn") -> "AttentionParams":
        if heads < 1 or d % heads:
            raise ContractViolation(f"head count {heads} must divide the label dimension {d}")
        p = cls(d, heads, seed=seed)
        rng = np.random.default_rng(seed)
        dk = p.d_k
        for h in range(heads):
            p.w_q.append(Parameter(glorot_uniform(rng, d, dk), f"{prefix}.w_q.{h}"))
            p.w_k.append(Parameter(glorot_uniform(rng, d, dk), f"{prefix}.w_k.{h}"))
            p.w_v.append(Parameter(glorot_uniform(rng, d, dk), f"{prefix}.w_v.{h}"))
        p.w_o = Parameter(glorot_uniform(rng, heads * dk, d), f"{prefix}.w_o")
        return p

    @property
    def d_k(self) -> int:
        return self.d // self.heads

    def head(self, h: int) -> Tuple[Parameter, Parameter, Parameter]:
        return self.w_q[h], self.w_k[h], self.w_v[h]

    def parameters(self) -> List[Parameter]:
        out = []
        for h in range(self.heads):
            out += [self.w_q[h], self.w_k[h], self.w_v[h]]
        return out + [self.w_o]


def _as_row(x: Tensor, d: int, what: str) -> Tensor:
    x = as_tensor(x)
    if x.shape == (d,):
        return ops.reshape(x, (1, d))
    if x.shape == (1, d):
        return x
    raise ContractViolation(f"{what}: expected a vector of length {d}, got shape {x.shape}")


def scaled_attention(query, keys, values, head) -> Tuple[Tensor, Tensor]:
    """One head. Returns (output of length d_k, weights over keys)."""
    w_q, w_k, w_v = head
    keys, values = as_tensor(keys), as_tensor(values)
    d = w_q.shape[0]
    if keys.ndim != 2 or keys.shape[0] < 1 or keys.shape[1] != d:
        raise ContractViolation(f"scaled_attention: keys must be (n>=1, {d}), got {keys.shape}")
    if values.shape != keys.shape:
        raise ContractViolation(f"scaled_attention: keys {keys.shape} and values {values.shape} differ")
    q = ops.matmul(_as_row(query, d, "scaled_attention query"), w_q)
    logits = ops.matmul(q, ops.transpose(ops.matmul(keys, w_k))) / float(np.sqrt(w_k.shape[1]))
    weights = ops.softmax_rows(logits)
    out = ops.matmul(weights, ops.matmul(values, w_v))
    return ops.reshape(out, (w_v.shape[1],)), ops.reshape(weights, (keys.shape[0],))


def multi_head(query, keys, values, params: AttentionParams) -> Tensor:
    heads = [scaled_attention(query, keys, values, params.head(h))[0] for h in range(params.heads)]
    joined = ops.reshape(ops.concat(heads), (1, params.heads * params.d_k))
    return ops.reshape(ops.matmul(joined, params.w_o), (params.d,))


# ---------- tuples (reference path) ----------
@dataclass(frozen=True)
class AATuple:
    query: np.ndarray
    keys: np.ndarray
    values: np.ndarray


def build_tuples(anchor_index: int, anchor_proj, partner_proj, neighbors: Sequence[int],
                 mode: AAMode, pool=None) -> List[AATuple]:
    """Tuples for one anchor. Joint mode yields a single tuple over all neighbors."""
    anchor_proj = np.asarray(anchor_proj)
    pool = anchor_proj if pool is None else np.asarray(pool)
    q = np.asarray(partner_proj)[anchor_index]
    rows = _neighbor_rows(anchor_index, anchor_proj, pool, neighbors)
    if not len(rows):
        raise ContractViolation(f"anchor {anchor_index}: empty neighbor list")
    if AAMode(mode) is AAMode.joint:
        return [AATuple(q, rows, rows)]
    anchor = anchor_proj[anchor_index][None, :]
    return [AATuple(q, r[None, :], anchor) for r in rows]


def _neighbor_rows(anchor_index, anchor_proj, pool, neighbors) -> np.ndarray:
    # position 0 is the anchor itself, the rest index into the candidate pool
    rest = [pool[i] for i in neighbors[1:]]
    return np.stack([anchor_proj[anchor_index]] + rest)


def proxy_from_tuples(tuples: Sequence[AATuple], params: AttentionParams) -> Tensor:
    """Average of multi-head outputs over the tuples."""
    outs = [multi_head(t.query, t.keys, t.values, params) for t in tuples]
    total = outs[0]
    for o in outs[1:]:
        total = total + o
    return total / float(len(outs))


# ---------- batched proxies (training path) ----------
def _mask(graph: CorrelationGraph, n: int, bank: int, offset: int) -> np.ndarray:
    m = np.zeros((n, bank), dtype=bool)
    for nl in graph.neighbors:
        m[nl.anchor, nl.anchor] = True
        for j in nl.indices[1:]:
            m[nl.anchor, offset + j] = True
    return m


def modality_proxies(anchor_proj: Tensor, partner_proj: Tensor, graph: CorrelationGraph,
                     params: AttentionParams, mode: AAMode = AAMode.joint,
                     pool: Optional[Tensor] = None) -> Tensor:
    """AA proxies for every anchor of one modality in a batch, shape (n, d).

    `pool` holds the candidate embeddings when the graph was built over another
    modality's projections; otherwise neighbors index `anchor_proj`.
    """
    anchor_proj, partner_proj = as_tensor(anchor_proj), as_tensor(partner_proj)
    n, d = anchor_proj.shape
    if d != params.d or partner_proj.shape != anchor_proj.shape:
        raise ContractViolation(
            f"proxies: projections {anchor_proj.shape} / {partner_proj.shape} do not fit d={params.d}")
    if graph.n != n:
        raise ContractViolation(f"proxies: graph covers {graph.n} anchors, batch has {n}")
    if pool is None:
        bank, offset = anchor_proj, 0
    else:
        bank, offset = ops.vstack([anchor_proj, as_tensor(pool)]), n
    mask = _mask(graph, n, bank.shape[0], offset)
    scale = float(np.sqrt(params.d_k))

    heads = []
    for h in range(params.heads):
        w_q, w_k, w_v = params.head(h)
        logits = ops.matmul(ops.matmul(partner_proj, w_q),
                            ops.transpose(ops.matmul(bank, w_k))) / scale
        if AAMode(mode) is AAMode.joint:
            weights = ops.masked_softmax_rows(logits, mask)
            heads.append(ops.matmul(weights, ops.matmul(bank, w_v)))
        else:
            heads.append(_literal_head(logits, mask, ops.matmul(anchor_proj, w_v)))
    return ops.matmul(ops.concat(heads), params.w_o)


def _literal_head(logits: Tensor, mask: np.ndarray, anchor_values: Tensor) -> Tensor:
    # one single-key softmax per tuple; each weight is exactly 1 and every value is the anchor
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ContractViolation("literal proxy: anchor with an empty neighbor list")
    total = None
    for theta in range(int(counts.max())):
        slot = np.zeros_like(mask)
        for i in range(mask.shape[0]):
            cols = np.flatnonzero(mask[i])
            if theta < cols.size:
                slot[i, cols[theta]] = True
        w = ops.row_sum(ops.masked_softmax_rows(logits, slot))
        total = w if total is None else total + w
    mean_weight = total / counts.astype(np.float64)
    return ops.transpose(ops.mul(ops.transpose(anchor_values), mean_weight))


def aa_proxy(anchor_index: int, modality: str, projections: Mapping[str, Tensor],
             graph: CorrelationGraph, params: AttentionParams, mode: AAMode = AAMode.joint,
             partner: Optional[str] = None, pool: Optional[Tensor] = None) -> Tensor:
    """AA(x_i) for one anchor; the query is the anchor's cross-modal partner."""
    if not 0 <= anchor_index < graph.n:
        raise ContractViolation(f"anchor {anchor_index} has no neighbor list (graph covers {graph.n})")
    partner = partner or next(m for m in projections if m != modality)
    proxies = modality_proxies(projections[modality], projections[partner], graph, params, mode, pool)
    return ops.reshape(ops.take_rows(proxies, [anchor_index]), (params.d,))


def attention_sets(c: int, heads: int, seed: int, modalities: Sequence[str],
                   per_modality: bool = False) -> Dict[str, AttentionParams]:
    """One shared parameter set, or one per modality."""
    if not per_modality:
        shared = AttentionParams.initialize(c, heads, [seed, 100])
        return {m: shared for m in modalities}
    return {m: AttentionParams.initialize(c, heads, [seed, 101 + i], prefix=f"attn.{m}")
            for i, m in enumerate(modalities)}


def unique_parameters(sets: Mapping[str, AttentionParams]) -> List[Parameter]:
    seen, out = set(), []
    for p in sets.values():
        if id(p) in seen:
            continue
        seen.add(id(p))
        out += p.parameters()
    return out
