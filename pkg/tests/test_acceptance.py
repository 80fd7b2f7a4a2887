"""Acceptance suite: one test per numbered criterion.

A summary line per criterion is printed at the end of the pytest run.
"""

import time

import numpy as np
import pytest
from conftest import make_cand

import oracles
from cenet.cli import main
from cenet.clustering import cut_and_group, embedding_distances
from cenet.config import PipelineConfig
from cenet.decode import PredictionMaps, nms
from cenet.eval import grid_search, match_regions, prf
from cenet.geometry import BoxAA, iou
from cenet.gradcheck import CHECKS, run_all
from cenet.losses import contrastive, emb_loss, sample_pairs, uniform_pairs
from cenet.pairing import rknn_pairs
from cenet.pipeline import Detector, detect_from_maps
from cenet.synthdata import SceneSpec, generate_scene
from cenet.training import Trainer
from cenet.weaksup import fine_chars_for


def _random_box(rng, origin=None):
    lo = rng.uniform(0, 60, 2) if origin is None else origin + rng.uniform(-20, 20, 2)
    return np.r_[lo, lo + rng.uniform(5, 40, 2)]


@pytest.mark.criterion(1, "box IoU vs 1000x1000 raster on 1000 pairs")
def test_c1_iou_oracle(report):
    rng = np.random.default_rng(0)
    pairs = []
    for _ in range(1000):
        a = _random_box(rng)
        pairs.append((a, _random_box(rng, a[:2])))
    t0 = time.perf_counter()
    got = [iou(BoxAA(*a), BoxAA(*b)) for a, b in pairs]
    elapsed = time.perf_counter() - t0
    err = max(abs(g - oracles.raster_iou(a, b, 1000)) for g, (a, b) in zip(got, pairs))
    report(f"max err {err:.2e}, {elapsed:.3f}s")
    assert err < 2e-3
    assert elapsed < 1.0


@pytest.mark.criterion(2, "NMS and r-KNN vs brute force on 200 instances")
def test_c2_nms_rknn_oracles(report):
    rng = np.random.default_rng(2)
    elapsed, worst_ratio = 0.0, 0.0
    for _ in range(200):
        n = int(rng.integers(1, 201))
        xy = rng.uniform(0, 120, (n, 2))
        wh = rng.uniform(2, 15, (n, 2))
        scores = np.round(rng.random(n), 2)
        cands = [make_cand(float(s), float(x), float(y), float(w), float(h)) for s, (x, y), (w, h) in zip(scores, xy, wh)]
        k = int(rng.integers(1, 8))
        t0 = time.perf_counter()
        kept = nms(cands, 0.5)
        pairs = rknn_pairs(xy, wh, k, 5.0)
        elapsed += time.perf_counter() - t0
        recs = [(c.score, c.cx, c.cy, c.as_xyxy()) for c in cands]
        assert kept == [cands[i] for i in oracles.nms(recs, 0.5)]
        assert [tuple(p) for p in pairs.tolist()] == oracles.rknn(xy.tolist(), wh.tolist(), k, 5.0)
        # pair count bound with the default k = 5
        default = rknn_pairs(xy, wh, 5, 5.0)
        assert len(default) <= 5 * n
        worst_ratio = max(worst_ratio, len(default) / n)
    report(f"{elapsed:.2f}s, max |LCP|/M {worst_ratio:.2f}")
    assert elapsed < 5.0


@pytest.mark.criterion(3, "gradient suite, 20 seeds, kink-excluded")
def test_c3_gradient_suite(report):
    t0 = time.perf_counter()
    results = run_all(range(20))
    elapsed = time.perf_counter() - t0
    worst = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.max_rel_error)
    report(f"{elapsed:.0f}s, " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert set(worst) == set(CHECKS)
    failed = [(r.name, r.seed, r.max_rel_error) for r in results if not r.passed]
    assert not failed
    assert elapsed < 120


@pytest.mark.criterion(4, "contrastive loss reference values")
def test_c4_contrastive_values(report):
    z = np.zeros(3)
    assert contrastive(z, z, 1).value == 0.0
    assert contrastive(z, np.array([1.0, 0, 0]), 0).value == 0.0
    assert contrastive(z, np.array([0.0, 2.5, 0]), 0).value == 0.0
    v = contrastive(z, np.array([0.4, 0, 0]), 0).value
    report(f"(l=0, D=0.4) -> {v!r}")
    assert v == 0.36


def _partition(groups):
    return {frozenset(g.members) for g in groups}


@pytest.mark.criterion(5, "clustering recovers separable groups, monotone in d")
def test_c5_clustering(report):
    t0 = time.perf_counter()
    n_layouts = 0
    for seed in range(100):
        scene = generate_scene(SceneSpec(n_words=(2, 4)), seed)
        boxes, groups = scene.char_boxes, scene.char_groups
        rng = np.random.default_rng(seed)
        centers = (boxes[:, :2] + boxes[:, 2:]) / 2
        pairs = rknn_pairs(centers, boxes[:, 2:] - boxes[:, :2], 5, 5.0)
        proto = rng.normal(0, 1, (groups.max() + 1, 16))
        proto *= 3.0 / np.linalg.norm(proto, axis=1, keepdims=True)
        emb = proto[groups] + rng.normal(0, 0.03, (len(groups), 16))
        dist = embedding_distances(emb, pairs)
        same = groups[pairs[:, 0]] == groups[pairs[:, 1]]
        intra, inter = dist[same].max(), dist[~same].min() if (~same).any() else np.inf
        assert intra < inter
        d = (intra + min(inter, intra + 2.0)) / 2
        truth = {frozenset(np.flatnonzero(groups == g).tolist()) for g in np.unique(groups)}
        # layouts where a word is not connected by local pairs cannot be recovered by any d
        if oracles.components(len(groups), [tuple(p) for p in pairs[same].tolist()]) != truth:
            continue
        n_layouts += 1
        assert _partition(cut_and_group(len(groups), pairs, dist, d)) == truth
        parts = [_partition(cut_and_group(len(groups), pairs, dist, dd)) for dd in np.linspace(0, 6, 13)]
        for fine, coarse in zip(parts[:-1], parts[1:]):
            assert all(any(f <= c for c in coarse) for f in fine)
    elapsed = time.perf_counter() - t0
    report(f"{n_layouts}/100 layouts connected, {elapsed:.1f}s")
    assert n_layouts >= 95
    assert elapsed < 10


@pytest.mark.criterion(6, "weak supervision: fine beats coarse by >= 0.05 IoU")
def test_c6_weak_supervision(report):
    t0 = time.perf_counter()
    spec = SceneSpec(layouts=("straight",), char_width=(4.0, 14.0), char_height=(12.0, 12.0),
                     rotation=(-5.0, 5.0), margin=0.0)
    coarse_iou, fine_iou = [], []
    for seed in range(60):
        scene = generate_scene(spec, seed)
        for w in scene.words:
            truth = scene.char_boxes[scene.char_groups == w.group_id]
            coarse, fine = fine_chars_for(w, truth, np.ones(len(truth)))
            coarse_iou += [iou(c, BoxAA(*t)) for c, t in zip(coarse, truth)]
            fine_iou += [iou(f.box, BoxAA(*t)) for f, t in zip(fine, truth)]
            c2, f2 = fine_chars_for(w, np.zeros((0, 4)), np.zeros(0))
            assert np.array_equal(np.array([f.box.as_array() for f in f2]), np.array([c.as_array() for c in c2]))
    gain = np.mean(fine_iou) - np.mean(coarse_iou)
    elapsed = time.perf_counter() - t0
    report(f"coarse {np.mean(coarse_iou):.3f}, fine {np.mean(fine_iou):.3f}, gain {gain:.3f}, {elapsed:.1f}s")
    assert gain >= 0.05
    assert elapsed < 10


def _rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def _fixture_with_singletons():
    conf = np.zeros((20, 24))
    offsets = np.full((4, 20, 24), 1.5)
    emb = np.zeros((2, 20, 24))
    gts = []
    for k, row in enumerate((3, 9)):
        for col in (4, 8, 12):
            conf[row, col] = 0.9
            emb[:, row, col] = (3.0 * k, 0.0)
        gts.append(_rect(10, 4 * row - 6, 54, 4 * row + 6))
    # isolated false positives, each with its own embedding
    for k, (row, col) in enumerate([(15, 3), (16, 20), (3, 21)]):
        conf[row, col] = 0.9
        emb[:, row, col] = (0.0, 3.0 * (k + 1))
    return PredictionMaps(conf, offsets, emb, 4), gts


# desk-scale benchmark settings: heavier embedding loss, jittered embedding samples
E2E_CONFIG = dict(lambda2=5.0, emb_jitter=0.25, steps=3000, lr_drop_at=2000, seed=0)
E2E_S_GRID = [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]
E2E_D_GRID = [0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6]
E2E_MIN_F = 0.80
# value reached by this configuration; regressions beyond +-0.03 fail
E2E_PINNED_F = 0.834


@pytest.mark.slow
@pytest.mark.criterion(7, "end to end: 500 train / 50 val / 100 test scenes, F at IoU 0.5")
def test_c7_end_to_end(report):
    t0 = time.perf_counter()
    spec = SceneSpec(layouts=("straight", "arc"))
    train = [generate_scene(spec, seed) for seed in range(500)]
    val = [generate_scene(spec, 10_000 + seed) for seed in range(50)]
    test = [generate_scene(spec, 20_000 + seed) for seed in range(100)]
    cfg = PipelineConfig(**E2E_CONFIG)
    trainer = Trainer(cfg)
    trainer.fit(train)
    det = Detector(trainer.net, cfg)

    best = grid_search([det.maps(s.image) for s in val], [[w.boundary for w in s.words] for s in val],
                       E2E_S_GRID, E2E_D_GRID, cfg)
    matchings = [match_regions(det.detect(s.image, best.s, best.d).boundaries, [w.boundary for w in s.words])
                 for s in test]
    r = prf(matchings)
    elapsed = time.perf_counter() - t0
    report(f"F {r.f_measure:.3f} (P {r.precision:.3f}, R {r.recall:.3f}) at s={best.s}, d={best.d}; "
           f"val F {best.f_measure:.3f}; {elapsed / 60:.1f} min")
    assert r.f_measure >= E2E_MIN_F
    assert abs(r.f_measure - E2E_PINNED_F) <= 0.03
    assert elapsed <= 30 * 60


@pytest.mark.criterion(8, "ablations: short-word removal and pair reweighting")
def test_c8_ablations(report):
    maps, gts = _fixture_with_singletons()
    res = {}
    for on in (False, True):
        cfg = PipelineConfig(short_word_removal=on)
        det = detect_from_maps(maps, cfg, s=0.5, d=0.5)
        res[on] = prf(match_regions(det.boundaries, gts))
    assert res[True].precision > res[False].precision
    assert res[True].recall == res[False].recall

    rates = {on: np.mean([_violation_rate(on, seed) for seed in range(5)]) for on in (False, True)}
    report(
        f"P {res[False].precision:.2f}->{res[True].precision:.2f}, R {res[True].recall:.2f}; "
        f"violations {rates[False]:.3f}->{rates[True]:.3f}"
    )
    assert rates[True] < rates[False]


def _pair_corpus():
    groups = np.repeat(np.arange(20), 8)
    n = len(groups)
    pos = [(i, j) for i in range(n) for j in range(i + 1, n) if groups[i] == groups[j]]
    neg = [(i, j) for i in range(n) for j in range(i + 1, n) if groups[j] - groups[i] == 1][:60]
    # about 1 negative per 10 pairs
    return n, np.array(pos + neg), np.array([1] * len(pos) + [0] * len(neg))


def _violation_rate(reweight: bool, seed: int, steps: int = 60, R: int = 64, lr: float = 0.05) -> float:
    """Fraction of negative pairs closer than the margin after ``steps`` updates
    of free embeddings on the embedding loss."""
    n, pairs, labels = _pair_corpus()
    rng = np.random.default_rng(seed)
    emb = rng.normal(0, 0.05, (n, 8))
    for _ in range(steps):
        sp = sample_pairs(labels, R, 0.6, rng) if reweight else uniform_pairs(len(labels), R, rng)
        rep = emb_loss(emb, pairs[sp.indices], labels[sp.indices])
        emb -= lr * len(sp.indices) * rep.grads["embeddings"]
    d = np.linalg.norm(emb[pairs[:, 0]] - emb[pairs[:, 1]], axis=1)
    return float(np.mean(d[labels == 0] < 1.0))


@pytest.mark.criterion(9, "train and infer are byte-identical across runs")
def test_c9_determinism(tmp_path, report):
    spec = tmp_path / "scene.spec"
    spec.write_text("height = 64\nwidth = 64\nn_words = 1,2\n")
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "data"), "--count", "4", "--seed", "5"]) == 0
    outputs = []
    for run in ("a", "b"):
        ckpt = tmp_path / f"{run}.npz"
        assert main(["train", "--data", str(tmp_path / "data"), "--out", str(ckpt), "--steps", "10", "--seed", "3",
                     "--set", "batch_size=4"]) == 0
        pred = tmp_path / f"pred_{run}"
        assert main(["infer", "--checkpoint", str(ckpt), str(tmp_path / "data"), "--out", str(pred), "--extras", "--s", "0.3"]) == 0
        files = {p.name: p.read_bytes() for p in sorted(pred.iterdir())}
        outputs.append((ckpt.read_bytes(), (tmp_path / f"{run}.loss.csv").read_bytes(), files))
    a, b = outputs
    report(f"{len(a[2])} inference files compared")
    assert a[0] == b[0]
    assert a[1] == b[1]
    assert a[2] == b[2]
