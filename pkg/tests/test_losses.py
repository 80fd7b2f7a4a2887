import math

import numpy as np
import pytest

from cenet.gradcheck import check_cls, check_contrastive, check_emb, check_iou, check_total
from cenet.losses import (
    DetectionTargets,
    EmptySample,
    LabeledPair,
    LossReport,
    cls_loss_ohem,
    contrastive,
    contrastive_pair,
    emb_loss,
    iou_reg_loss,
    ohem_sample,
    sample_pairs,
    total_loss,
    uniform_pairs,
)


def test_targets_shape_check():
    with pytest.raises(ValueError):
        DetectionTargets(np.zeros((3, 3)), np.zeros((4, 3, 2)))


def test_cls_perfect_is_zero():
    labels = np.array([[1, -1], [-1, -1]], dtype=np.int8)
    rep = cls_loss_ohem(labels.astype(float), labels, rng=np.random.default_rng(0))
    assert rep.value == 0.0
    assert not rep.grads["scores"].any()


def test_cls_one_positive_example():
    labels = -np.ones((5, 5), dtype=np.int8)
    labels[2, 2] = 1
    scores = -np.ones((5, 5))
    scores[2, 2] = 0.0
    rep = cls_loss_ohem(scores, labels, rng=np.random.default_rng(0))
    assert rep.value == pytest.approx(0.25)
    assert rep.info["n_sampled"] == 4


def test_ohem_composition():
    rng = np.random.default_rng(0)
    labels = -np.ones((20, 20), dtype=np.int8)
    labels[:2, :5] = 1  # P = 10
    labels[10, :] = 0
    scores = rng.normal(size=(20, 20))
    mask = ohem_sample(scores, labels, 3, 0.3, np.random.default_rng(1))
    assert mask.sum() == 40
    assert mask[labels > 0].all()
    assert not mask[labels == 0].any()
    neg = labels < 0
    hinge = np.maximum(0, 1 + scores)
    # ceil(0.3 * 30) = 9 hardest negatives are always present
    hardest = np.argsort(-hinge[neg], kind="stable")[:9]
    assert mask[neg][hardest].all()


def test_ohem_no_positive_samples_three_negatives():
    labels = -np.ones((4, 4), dtype=np.int8)
    mask = ohem_sample(np.zeros((4, 4)), labels, 3, 0.3, np.random.default_rng(0))
    assert mask.sum() == 3


def test_ohem_seeded():
    labels = np.where(np.random.default_rng(0).random((16, 16)) < 0.1, 1, -1).astype(np.int8)
    s = np.random.default_rng(1).normal(size=(16, 16))
    a = ohem_sample(s, labels, rng=np.random.default_rng(7))
    b = ohem_sample(s, labels, rng=np.random.default_rng(7))
    assert (a == b).all()


def test_ohem_hard_ties_by_index():
    labels = -np.ones((1, 20), dtype=np.int8)
    labels[0, 0] = 1
    mask = ohem_sample(np.zeros((1, 20)), labels, 3, 0.3, np.random.default_rng(0))
    # all negatives tie, so the single hard negative is the lowest index
    assert mask[0, 1]


def test_iou_loss_examples():
    t = np.full((4, 3, 3), 2.0)
    valid = np.ones((3, 3), bool)
    assert iou_reg_loss(t, t, valid).value == pytest.approx(0.0, abs=1e-12)
    assert iou_reg_loss(2 * t, t, valid).value == pytest.approx(math.log(4))
    assert iou_reg_loss(t, t, np.zeros((3, 3), bool)).value == 0.0


def test_iou_loss_clamps_nonpositive():
    t = np.ones((4, 1, 1))
    p = np.array([-1.0, 1.0, 1.0, 1.0]).reshape(4, 1, 1)
    rep = iou_reg_loss(p, t, np.ones((1, 1), bool))
    assert np.isfinite(rep.value)
    assert rep.grads["pred"][0, 0, 0] == 0.0


@pytest.mark.parametrize(
    "vi, vj, label, expected",
    [
        ([1.0, 2.0], [1.0, 2.0], 1, 0.0),
        ([0.0, 0.0], [1.5, 0.0], 0, 0.0),
        ([0.0, 0.0], [0.4, 0.0], 0, 0.36),
        ([0.0, 0.0], [0.3, 0.4], 1, 0.25),
    ],
)
def test_contrastive_values(vi, vj, label, expected):
    assert contrastive(np.array(vi), np.array(vj), label).value == pytest.approx(expected, abs=1e-15)


def test_contrastive_zero_distance_negative():
    rep = contrastive(np.zeros(3), np.zeros(3), 0)
    assert rep.value == 1.0
    assert not rep.grads["v_i"].any() and not rep.grads["v_j"].any()


def test_labeled_pair_validation():
    with pytest.raises(ValueError):
        LabeledPair(1, 1, 0, np.zeros(2), np.zeros(2))
    with pytest.raises(ValueError):
        LabeledPair(0, 1, 2, np.zeros(2), np.zeros(2))
    p = LabeledPair(0, 1, 0, np.zeros(2), np.array([0.4, 0.0]))
    assert contrastive_pair(p).value == pytest.approx(0.36)


def test_sample_pairs_composition():
    labels = np.array([0] * 1000 + [1] * 1000)
    sp = sample_pairs(labels, 1024, 0.6, np.random.default_rng(0))
    assert len(sp.indices) == 1024
    assert (labels[sp.indices] == 0).sum() == 615
    assert len(np.unique(sp.indices)) == 1024


def test_sample_pairs_degenerate_and_fill():
    sp = sample_pairs(np.zeros(100, int), 1024, 0.6, np.random.default_rng(0))
    assert sorted(sp.indices.tolist()) == list(range(100))
    assert sp.neg_fraction == 1.0
    labels = np.array([0] * 100 + [1] * 2000)
    sp = sample_pairs(labels, 1024, 0.6, np.random.default_rng(0))
    assert len(sp.indices) == 1024 and (labels[sp.indices] == 0).sum() == 100
    with pytest.raises(EmptySample):
        sample_pairs(np.zeros(0, int))


def test_sample_pairs_seeded():
    labels = np.random.default_rng(3).integers(0, 2, 3000)
    a = sample_pairs(labels, 512, 0.6, np.random.default_rng(11)).indices
    b = sample_pairs(labels, 512, 0.6, np.random.default_rng(11)).indices
    assert (a == b).all()


def test_uniform_pairs():
    sp = uniform_pairs(50, 1024, np.random.default_rng(0))
    assert sp.indices.tolist() == list(range(50))
    with pytest.raises(EmptySample):
        uniform_pairs(0)


def test_emb_loss_examples():
    emb = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]])
    assert emb_loss(emb, [[0, 1], [0, 2]], [1, 0]).value == 0.0
    single = emb_loss(np.array([[0.0, 0.0], [0.4, 0.0]]), [[0, 1]], [0])
    assert single.value == pytest.approx(contrastive(np.zeros(2), np.array([0.4, 0.0]), 0).value)
    with pytest.raises(EmptySample):
        emb_loss(emb, np.zeros((0, 2)), [])


def test_emb_loss_gradient_accumulates():
    emb = np.array([[0.0, 0.0], [0.2, 0.0], [0.0, 0.3]])
    rep = emb_loss(emb, [[0, 1], [0, 2]], [1, 1])
    # d/dv0 of mean(|v0-v1|^2 + |v0-v2|^2)
    np.testing.assert_allclose(rep.grads["embeddings"][0], [(-0.4) / 2, (-0.6) / 2])


def test_emb_loss_rotation_invariant():
    rng = np.random.default_rng(2)
    emb = rng.normal(0, 0.5, (10, 4))
    pairs = np.array([[i, j] for i in range(10) for j in range(i + 1, 10)])
    labels = rng.integers(0, 2, len(pairs))
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    a = emb_loss(emb, pairs, labels).value
    b = emb_loss(emb @ q, pairs, labels).value
    assert a == pytest.approx(b, rel=1e-12)


def test_total_loss():
    parts = [LossReport(v, {"x": np.ones(2) * v}) for v in (0.5, 0.25, 0.1)]
    rep = total_loss(*parts)
    assert rep.value == pytest.approx(0.85)
    assert rep.grads["emb.x"].tolist() == [0.1, 0.1]
    rep = total_loss(*parts, lambda1=1.0, lambda2=0.0)
    assert rep.value == pytest.approx(0.75)
    assert not rep.grads["emb.x"].any()


def test_default_loss_weights():
    from cenet.config import PipelineConfig

    cfg = PipelineConfig()
    assert (cfg.lambda1, cfg.lambda2) == (1.0, 1.0)
    assert (cfg.R, cfg.alpha, cfg.k, cfg.beta, cfg.t1, cfg.t2) == (1024, 0.6, 5, 5.0, 0.2, 0.5)


@pytest.mark.parametrize("check", [check_cls, check_iou, check_contrastive, check_emb, check_total])
@pytest.mark.parametrize("seed", range(3))
def test_finite_differences(check, seed):
    r = check(seed)
    assert r.passed, r


@pytest.mark.parametrize("check", [check_cls, check_iou, check_emb])
def test_finite_differences_catch_bugs(check):
    assert not check(0, corrupt=1e-3).passed
