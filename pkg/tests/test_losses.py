import itertools

import numpy as np
import pytest

from brain.attention import AAMode, attention_sets, unique_parameters
from brain.graph import build_correlation_graph
from brain.losses import (AAScope, LossConfig, LossKind, aa_contrastive_loss, aa_triplet_loss,
                          angular_loss, compute_proxies, dsl_loss, hinge_loss, label_loss, metric_loss,
                          n_pair_loss, total_loss, zoo_loss)
from brain.mining import TripletGroup, TripletSet, mine_triplets, overlap
from data import AUDIO, VISUAL, other
from engine import ContractViolation, Parameter, Tensor, grad_check
from tests.conftest import one_hot

MODS = (AUDIO, VISUAL)


def pair(audio, visual):
    return {AUDIO: Tensor(np.asarray(audio, dtype=float)), VISUAL: Tensor(np.asarray(visual, dtype=float))}


def brute_triplets(labels, strategy):
    lab = np.asarray(labels)
    n = len(lab)
    shares = lambda i, j: bool(np.any(lab[i] & lab[j]))
    if strategy == "triplet_dagger":
        pats = list(itertools.product(MODS, repeat=3))
    else:
        pats = [(AUDIO, VISUAL, VISUAL), (VISUAL, AUDIO, AUDIO)]
    out = set()
    for am, pm, nm in pats:
        for a, p, q in itertools.product(range(n), repeat=3):
            if am == pm and a == p:
                continue
            if shares(a, p) and not shares(a, q):
                out.add(((a, am), (p, pm), (q, nm)))
    return out


# ---------- label loss ----------
def test_label_loss_examples():
    y = one_hot([0, 1, 2], 3).astype(float)
    assert label_loss(y, y, y).item() == 0.0
    y1 = one_hot([1], 3).astype(float)
    assert label_loss(y1 + np.array([[1.0, 0.0, 0.0]]), y1, y1).item() == pytest.approx(1.0)


def test_label_loss_shape_mismatch():
    with pytest.raises(ContractViolation):
        label_loss(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 4)))


def test_label_loss_is_norm_over_batch_size():
    rng = np.random.default_rng(0)
    y = one_hot([0, 1, 1, 0], 2).astype(float)
    fa, fv = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    expected = np.linalg.norm(fa - y) / 4 + np.linalg.norm(fv - y) / 4
    assert label_loss(fa, fv, y).item() == pytest.approx(expected, rel=1e-12)
    doubled = label_loss(np.vstack([fa, fa]), np.vstack([fv, fv]), np.vstack([y, y])).item()
    assert doubled == pytest.approx(expected / np.sqrt(2), rel=1e-12)


# ---------- mining ----------
@pytest.mark.parametrize("strategy", ["triplet", "triplet_dagger"])
def test_mining_matches_enumeration(strategy):
    labels = one_hot([0, 0, 1], 2)
    mined = set(mine_triplets(labels, strategy))
    assert mined == brute_triplets(labels, strategy)
    if strategy == "triplet":
        assert len(mined) == 12


def test_mining_multi_label_batches(rng):
    labels = (rng.random((7, 3)) < 0.4).astype(np.uint8)
    labels[labels.sum(axis=1) == 0, 0] = 1
    for strategy in ("triplet", "triplet_dagger"):
        assert set(mine_triplets(labels, strategy)) == brute_triplets(labels, strategy)


def test_same_category_batch_has_no_triplets(caplog):
    with caplog.at_level("WARNING"):
        ts = mine_triplets(one_hot([1, 1], 2), "triplet")
    assert len(ts) == 0
    assert "no valid triplet" in caplog.text
    assert aa_triplet_loss(pair(np.eye(2), np.eye(2)), pair(np.eye(2), np.eye(2)), ts, 1.2).item() == 0.0


def test_hard_triplet_keeps_the_closest_negative(rng):
    labels = one_hot([0, 0, 1, 1, 2, 2], 3)
    emb = pair(rng.normal(size=(6, 3)), rng.normal(size=(6, 3)))
    dist = {(am, nm): ((emb[am].data[:, None] - emb[nm].data[None]) ** 2).sum(axis=2)
            for am in MODS for nm in MODS}
    hard = mine_triplets(labels, "hard_triplet", dist)
    same = (labels @ labels.T) > 0
    assert len(hard) == 2 * 6 * 2
    for (a, am), (p, pm), (q, nm) in hard:
        assert same[a, p] and not same[a, q]
        negatives = np.flatnonzero(~same[a])
        assert dist[(am, nm)][a, q] <= dist[(am, nm)][a, negatives].min()


def test_hard_triplet_needs_distances():
    with pytest.raises(ContractViolation):
        mine_triplets(one_hot([0, 1], 2), "hard_triplet")


# ---------- triplet and contrastive ----------
def _single(am, pm, nm):
    return TripletSet("triplet", (TripletGroup(am, pm, nm, np.array([0]), np.array([0]), np.array([1])),))


def test_triplet_loss_examples():
    ts = _single(AUDIO, VISUAL, VISUAL)
    anchors = pair([[0.0, 0.0], [9.0, 9.0]], [[0.0, 0.0], [9.0, 9.0]])
    satisfied = pair([[0.0, 0.0], [9.0, 9.0]], [[1.0, 0.0], [0.0, 2.0]])
    assert aa_triplet_loss(anchors, satisfied, ts, 1.2).item() == 0.0
    tied = pair([[0.0, 0.0], [9.0, 9.0]], [[1.0, 0.0], [0.0, 1.0]])
    assert aa_triplet_loss(anchors, tied, ts, 1.2).item() == pytest.approx(1.2)
    with pytest.raises(ContractViolation):
        aa_triplet_loss(anchors, tied, ts, 0.0)


def test_contrastive_examples():
    labels = one_hot([0, 1], 2)
    emb = pair([[0.0, 0.0], [0.5, 0.0]], [[0.0, 0.0], [0.5, 0.0]])
    # two dissimilar pairs at distance 0.5 out of four, in each direction
    assert aa_contrastive_loss(emb, emb, labels, 1.0).item() == pytest.approx(2 * 0.125 / 4)
    far = pair([[0.0, 0.0], [3.0, 0.0]], [[0.0, 0.0], [3.0, 0.0]])
    assert aa_contrastive_loss(far, far, labels, 1.0).item() == pytest.approx(0.0, abs=1e-12)


def test_contrastive_printed_flag_swaps_attraction():
    labels = one_hot([0], 1)
    emb = pair([[0.0, 0.0]], [[0.8, 0.0]])
    assert aa_contrastive_loss(emb, emb, labels, 1.0).item() == pytest.approx(0.5 * 0.8 ** 2)
    flipped = aa_contrastive_loss(emb, emb, labels, 1.0, printed=True).item()
    assert flipped == pytest.approx(0.5 * 0.2 ** 2)
    same = pair([[0.0, 0.0]], [[0.0, 0.0]])
    assert aa_contrastive_loss(same, same, labels, 1.0).item() == pytest.approx(0.0, abs=1e-12)


# ---------- zoo ----------
def test_hinge_zero_when_margins_hold():
    y = one_hot([0, 1, 2], 3).astype(float)
    emb = pair(y, y)
    assert hinge_loss(emb, emb, y.astype(np.uint8), 1.0).item() == pytest.approx(0.0, abs=1e-5)


def test_n_pair_without_negatives_is_zero(caplog):
    emb = pair([[1.0, 0.0]], [[0.0, 1.0]])
    with caplog.at_level("WARNING"):
        assert n_pair_loss(emb, emb, one_hot([0], 1)).item() == 0.0
    assert "n_pair" in caplog.text


def test_n_pair_matches_direct_formula(rng):
    labels = one_hot([0, 1, 1, 2], 3)
    a, v = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    same = (labels @ labels.T) > 0
    expected = 0.0
    for x, g in ((a, v), (v, a)):
        s = x @ g.T
        expected += np.mean([np.log1p(sum(np.exp(s[i, j] - s[i, i]) for j in range(4) if not same[i, j]))
                             for i in range(4)]) / 2
    assert n_pair_loss(pair(a, v), pair(a, v), labels).item() == pytest.approx(expected, rel=1e-12)


def test_angular_matches_direct_formula():
    labels = one_hot([0, 0, 1], 2)
    a = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 3.0]])
    v = np.array([[0.5, 0.5], [1.0, 1.0], [2.0, 0.0]])
    emb = {AUDIO: a, VISUAL: v}
    tan2 = np.tan(np.deg2rad(45.0)) ** 2
    vals = []
    for (i, am), (j, pm), (q, nm) in brute_triplets(labels, "triplet"):
        x, p, n = emb[am][i], emb[pm][j], emb[nm][q]
        vals.append(max(0.0, np.sum((x - p) ** 2) - 4 * tan2 * np.sum((n - (x + p) / 2) ** 2)))
    got = angular_loss(pair(a, v), pair(a, v), labels, 45.0).item()
    assert got == pytest.approx(np.mean(vals), rel=1e-12)


def test_dsl_matches_direct_formula(rng):
    a, v = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    expected = 0.0
    for x, g in ((a, v), (v, a)):
        s = x @ g.T
        e = np.exp(10.0 * s - (10.0 * s).max(axis=0))
        prior = e / e.sum(axis=0)
        z = s * prior * 5
        logp = z - z.max(axis=1, keepdims=True)
        logp -= np.log(np.exp(logp).sum(axis=1, keepdims=True))
        expected += -np.mean(np.diag(logp)) / 2
    assert dsl_loss(pair(a, v), pair(a, v), 10.0).item() == pytest.approx(expected, rel=1e-10)


def test_zoo_rejects_non_zoo_kinds():
    emb = pair(np.eye(2), np.eye(2))
    with pytest.raises(ContractViolation):
        zoo_loss(LossKind.triplet, emb, emb, one_hot([0, 1], 2), LossConfig())


# ---------- composition ----------
def test_total_is_label_loss_when_no_triplets(rng):
    labels = one_hot([0, 0, 0], 1)
    proj = pair(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)))
    terms = total_loss(proj, labels, LossConfig(use_aa=False))
    assert terms.metric.item() == 0.0
    assert terms.total.item() == terms.label.item()
    assert terms.count == 0


def test_perfect_projections_cost_nothing():
    y = one_hot([0, 1, 2, 0], 3)
    proj = pair(y, y)
    terms = total_loss(proj, y, LossConfig(use_aa=False))
    assert terms.total.item() == 0.0
    assert terms.count == 2 * (4 * 2 + 2 * 3)


def test_aa_requires_graphs():
    y = one_hot([0, 1], 2)
    with pytest.raises(ContractViolation):
        total_loss(pair(y, y), y, LossConfig())


def test_metric_loss_counts(rng):
    y = one_hot([0, 1, 1], 2)
    emb = pair(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)))
    _, count = metric_loss(emb, emb, y, LossConfig(kind="contrastive"))
    assert count == 9
    _, count = metric_loss(emb, emb, y, LossConfig(kind="hinge"))
    assert count == 3


def _gradient_case(seed, c=3, n=8):
    rng = np.random.default_rng(seed)
    labels = one_hot(np.arange(n) % c, c)
    proj = {AUDIO: Parameter(rng.normal(size=(n, c)), "proj.audio"),
            VISUAL: Parameter(rng.normal(size=(n, c)), "proj.visual")}
    graphs = {m: build_correlation_graph(proj[m].data, labels, 3, modality=m) for m in MODS}
    attn = attention_sets(c, 1, seed, MODS)
    return labels, proj, graphs, attn


@pytest.mark.parametrize("mode", list(AAMode))
@pytest.mark.parametrize("kind", list(LossKind))
def test_total_loss_gradients(kind, mode):
    labels, proj, graphs, attn = _gradient_case(21)
    cfg = LossConfig(kind=kind, aa_mode=mode)

    def fn():
        return total_loss(proj, labels, cfg, graphs, attn).total

    params = list(proj.values()) + unique_parameters(attn)
    # small step keeps every hinge on one side of its kink
    report = grad_check(fn, params, step=1e-5)
    assert report.passed, report.max_rel_error


# ---------- gradients at step 1e-3 ----------
CLEARANCE = 0.1


def _switch_clearance(kind, proxies, labels, cfg):
    """Distance of the nearest hard-negative tie or angular hinge argument from its switch point."""
    if kind is LossKind.hard_triplet:
        neg = ~overlap(labels)
        gaps = []
        for am in MODS:
            a, b = proxies[am].data, proxies[other(am)].data
            d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
            for row, allowed in zip(d, neg):
                vals = np.sort(row[allowed])
                if vals.size > 1:
                    gaps.append(vals[1] - vals[0])
        return min(gaps, default=np.inf)
    if kind is LossKind.angular:
        tan2 = np.tan(np.deg2rad(cfg.angular_degrees)) ** 2
        args = []
        for g in mine_triplets(labels, "triplet").groups:
            a = proxies[g.anchor_mod].data[g.a]
            p = proxies[g.pos_mod].data[g.p]
            n = proxies[g.neg_mod].data[g.n]
            args.append(((a - p) ** 2).sum(axis=1) - 4 * tan2 * ((n - (a + p) / 2) ** 2).sum(axis=1))
        return float(np.abs(np.concatenate(args)).min())
    return np.inf


def _smooth_case(kind, mode):
    # margins sit above every proxy distance so each hinge stays active
    for seed in range(21, 221):
        labels, proj, graphs, attn = _gradient_case(seed)
        proxies = compute_proxies(proj, graphs, attn, mode)
        emb = np.vstack([proxies[AUDIO].data, proxies[VISUAL].data])
        far = float(((emb[:, None, :] - emb[None, :, :]) ** 2).sum(axis=2).max()) + 1.0
        cfg = LossConfig(kind=kind, aa_mode=mode, margin=far, contrastive_margin=np.sqrt(far) + 1.0,
                         dsl_temperature=1.0)
        if _switch_clearance(kind, proxies, labels, cfg) >= CLEARANCE:
            return labels, proj, graphs, attn, cfg
    raise AssertionError(f"no draw keeps {kind.value} clear of its switch points")


@pytest.mark.parametrize("mode", list(AAMode))
@pytest.mark.parametrize("kind", list(LossKind))
def test_total_loss_gradients_at_coarse_step(kind, mode):
    labels, proj, graphs, attn, cfg = _smooth_case(kind, mode)
    report = grad_check(lambda: total_loss(proj, labels, cfg, graphs, attn).total,
                        list(proj.values()) + unique_parameters(attn), step=1e-3)
    assert report.passed, report.max_rel_error


def test_anchor_only_scope_gradients():
    labels, proj, graphs, attn = _gradient_case(5)
    cfg = LossConfig(scope=AAScope.anchor_only)
    report = grad_check(lambda: total_loss(proj, labels, cfg, graphs, attn).total,
                        list(proj.values()) + unique_parameters(attn), step=1e-5)
    assert report.passed, report.max_rel_error


def test_cross_modal_pool_gradients():
    labels, proj, _, attn = _gradient_case(8)
    pools = {AUDIO: proj[VISUAL], VISUAL: proj[AUDIO]}
    graphs = {m: build_correlation_graph(proj[m].data, labels, 3, modality=m,
                                         candidate_embeddings=pools[m].data) for m in MODS}
    cfg = LossConfig()
    report = grad_check(lambda: total_loss(proj, labels, cfg, graphs, attn, pools).total,
                        list(proj.values()) + unique_parameters(attn), step=1e-5)
    assert report.passed, report.max_rel_error


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig(margin=0)
    with pytest.raises(ValueError):
        LossConfig(kind="quadruplet")
    with pytest.raises(ValueError):
        LossConfig(unknown=1)
