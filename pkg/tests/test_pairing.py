import numpy as np
import pytest
from conftest import make_cand
from hypothesis import given, settings, strategies as st

import oracles
from cenet.pairing import BACKGROUND, CharPair, assign_groups, label_pairs, pair_labels, rknn, rknn_pairs


def test_three_chars_large_radius():
    cands = [make_cand(0.9, x, 0, 8, 8) for x in (0, 10, 20)]
    assert [(p.i, p.j) for p in rknn(cands, 5, 5.0)] == [(0, 1), (0, 2), (1, 2)]


def test_three_chars_small_radius():
    # radius 5 * sqrt(2) ~ 7.07: spacing 10 links nothing, spacing 5 links neighbours only
    assert rknn([make_cand(0.9, x, 0, 1, 1) for x in (0, 10, 20)], 5, 5.0) == []
    pairs = rknn([make_cand(0.9, x, 0, 1, 1) for x in (0, 5, 10)], 5, 5.0)
    assert [(p.i, p.j) for p in pairs] == [(0, 1), (1, 2)]
    assert [p.spatial_dist for p in pairs] == [5.0, 5.0]


def test_either_endpoint_suffices():
    # the big char reaches the small one; the small one does not reach back
    centers = np.array([[0.0, 0.0], [30.0, 0.0]])
    sizes = np.array([[10.0, 10.0], [1.0, 1.0]])
    assert rknn_pairs(centers, sizes, 1, 5.0).tolist() == [[0, 1]]


def test_degenerate_inputs():
    assert rknn_pairs(np.zeros((1, 2)), np.ones((1, 2))).shape == (0, 2)
    assert rknn([]) == []
    with pytest.raises(ValueError):
        rknn_pairs(np.zeros((3, 2)), np.ones((3, 2)), k=0)
    with pytest.raises(ValueError):
        CharPair(2, 1, 0.0)


def _instance(rng, n):
    # integer coordinates make distance ties common
    centers = rng.integers(0, 60, (n, 2)).astype(float)
    sizes = rng.integers(1, 8, (n, 2)).astype(float)
    return centers, sizes


@pytest.mark.parametrize("seed", range(25))
def test_rknn_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    centers, sizes = _instance(rng, int(rng.integers(2, 100)))
    k = int(rng.integers(1, 8))
    got = [tuple(p) for p in rknn_pairs(centers, sizes, k, 5.0).tolist()]
    assert got == oracles.rknn(centers.tolist(), sizes.tolist(), k, 5.0)
    assert len(got) <= k * len(centers)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(-200, 200), st.integers(-200, 200), st.sampled_from([0.25, 0.5, 2.0, 4.0]))
def test_rknn_translation_and_scale_invariance(seed, dx, dy, gamma):
    rng = np.random.default_rng(seed)
    centers, sizes = _instance(rng, 40)
    base = rknn_pairs(centers, sizes)
    assert (rknn_pairs(centers + [dx, dy], sizes) == base).all()
    # powers of two keep the arithmetic exact
    assert (rknn_pairs(centers * gamma, sizes * gamma) == base).all()


def test_labels():
    pairs = np.array([[0, 1], [1, 2], [2, 3]])
    groups = np.array([4, 4, 5, BACKGROUND])
    assert pair_labels(pairs, groups).tolist() == [1, 0, 0]
    assert pair_labels([[0, 1]], np.array([BACKGROUND, BACKGROUND])).tolist() == [0]
    cp = label_pairs([CharPair(0, 1, 1.0), CharPair(2, 3, 1.0)], groups)
    assert [p.label for p in cp] == [1, 0]


def test_assign_groups():
    gt = np.array([[0, 0, 10, 10], [20, 0, 30, 10]], float)
    cands = np.array([[1, 0, 10, 10], [20, 0, 26, 10], [50, 50, 60, 60], [21, 1, 29, 9]], float)
    assert assign_groups(cands, gt, [3, 8]).tolist() == [3, 8, BACKGROUND, 8]
    assert assign_groups(cands, np.zeros((0, 4)), []).tolist() == [BACKGROUND] * 4
