import json

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from cenet.config import PipelineConfig
from cenet.decode import PredictionMaps
from cenet.eval import (
    Matching,
    grid_search,
    match_regions,
    polygon_iou_matrix,
    prf,
    prf_counts,
    scene_report,
    write_heatmap_csv,
    write_report,
)


def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def test_identical_sets():
    gts = [rect(0, 0, 10, 10), rect(20, 0, 30, 8)]
    r = prf(match_regions(gts, gts))
    assert (r.precision, r.recall, r.f_measure) == (1.0, 1.0, 1.0)


def test_no_predictions():
    r = prf(match_regions([], [rect(0, 0, 5, 5)]))
    assert (r.precision, r.recall, r.f_measure) == (1.0, 0.0, 0.0)
    assert prf(match_regions([], [])).f_measure == 1.0


def test_counts():
    r = prf_counts(8, 10, 10)
    assert (r.precision, r.recall, r.f_measure) == pytest.approx((0.8, 0.8, 0.8))


def test_iou_matrix_on_integer_rects():
    ious = polygon_iou_matrix([rect(0, 0, 10, 10)], [rect(5, 0, 15, 10), rect(0, 0, 10, 10), rect(50, 50, 60, 60)])
    np.testing.assert_allclose(ious, [[1 / 3, 1.0, 0.0]])


def test_threshold_is_strict():
    # IoU exactly 0.5 does not count
    m = match_regions([rect(0, 0, 10, 10)], [rect(0, 0, 20, 10)], 0.5)
    assert m.n_match == 0


def test_one_to_one():
    gt = [rect(0, 0, 10, 10)]
    preds = [rect(0, 0, 10, 10), rect(0, 0, 10, 9)]
    m = match_regions(preds, gt)
    assert m.pairs == [(0, 0)]


@pytest.mark.parametrize("seed", range(10))
def test_greedy_matches_max_cardinality(seed):
    rng = np.random.default_rng(seed)
    gts = [rect(20 * i, 20 * j, 20 * i + 12, 20 * j + 12) for i in range(4) for j in range(3)]
    preds = []
    for g in gts:
        for _ in range(rng.integers(0, 3)):
            preds.append(g + rng.integers(-4, 5, size=2))
    m = match_regions(preds, gts)
    ious = polygon_iou_matrix(preds, gts)
    if len(preds):
        r, c = linear_sum_assignment(-(ious > 0.5).astype(float))
        assert m.n_match == int((ious[r, c] > 0.5).sum())
    assert len({p for p, _ in m.pairs}) == len({g for _, g in m.pairs}) == m.n_match


def _word_maps():
    conf = np.zeros((16, 24))
    offsets = np.full((4, 16, 24), 1.5)
    emb = np.zeros((2, 16, 24))
    words = [(4, 0.8, (0.0, 0.0)), (8, 0.8, (3.0, 0.0)), (12, 0.4, (0.0, 3.0))]
    for row, c, e in words:
        for col in (4, 8, 12):
            conf[row, col] = c
            emb[:, row, col] = e
    gts = [rect(10, 4 * row - 6, 54, 4 * row + 6) for row, c, _ in words if c > 0.5]
    return PredictionMaps(conf, offsets, emb, 4), gts


def test_grid_search_picks_best_with_ties_to_smaller():
    maps, gts = _word_maps()
    res = grid_search([maps], [gts], [0.9, 0.7, 0.5, 0.3], [5.0, 1.0, 0.5], PipelineConfig())
    assert (res.s, res.d) == (0.5, 0.5)
    assert res.f_measure == pytest.approx(1.0)
    table = {(s, d): f for s, d, f in res.table}
    assert table[(0.3, 0.5)] == pytest.approx(0.8)
    assert table[(0.9, 0.5)] == 0.0
    assert table[(0.5, 5.0)] < 1.0
    assert len(res.table) == 12


def test_grid_search_single_point_and_empty():
    maps, gts = _word_maps()
    res = grid_search([maps], [gts], [0.6], [0.4], PipelineConfig())
    assert (res.s, res.d, res.f_measure) == (0.6, 0.4, 1.0)
    with pytest.raises(ValueError):
        grid_search([maps], [gts], [], [0.4], PipelineConfig())


def test_report_is_order_independent(tmp_path):
    ms = [Matching([(0, 0)], 1, 2), Matching([], 3, 0), Matching([(0, 1), (1, 0)], 2, 2)]
    names = ["b", "a", "c"]
    r1 = scene_report(names, ms)
    r2 = scene_report(names[::-1], ms[::-1])
    assert r1 == r2
    assert r1["aggregate"]["n_match"] == 3
    write_report(r1, tmp_path / "r.json", tmp_path / "r.csv")
    assert json.loads((tmp_path / "r.json").read_text()) == r1
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0].startswith("scene,precision") and lines[-1].startswith("__all__")
    write_heatmap_csv(tmp_path / "h.csv", [(0.3, 0.4, 0.5)])
    assert (tmp_path / "h.csv").read_text().splitlines()[1] == "0.3000,0.4000,0.500000"
