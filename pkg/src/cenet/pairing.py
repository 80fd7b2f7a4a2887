"""Local character pairs via k-nearest-neighbours restricted to a radius."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import iou_matrix

BACKGROUND = -1


@dataclass
class CharPair:
    i: int
    j: int
    spatial_dist: float
    emb_dist: float | None = None
    label: int | None = None

    def __post_init__(self):
        if not self.i < self.j:
            raise ValueError("pairs are stored with i < j")


def rknn_pairs(centers: np.ndarray, sizes: np.ndarray, k: int = 5, beta: float = 5.0) -> np.ndarray:
    """Canonical ``(P, 2)`` array of local pairs, sorted lexicographically.

    Each anchor ``i`` looks at its ``k`` nearest neighbours (ties by index)
    and keeps ``j`` when ``|c_i - c_j| < beta * sqrt(w_i^2 + h_i^2)``. A pair
    exists if either endpoint produced it.
    """
    if k < 1 or beta <= 0:
        raise ValueError("need k >= 1 and beta > 0")
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    wh = np.asarray(sizes, dtype=float).reshape(-1, 2)
    m = len(c)
    if m < 2:
        return np.zeros((0, 2), dtype=int)
    diff = c[:, None, :] - c[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    kk = min(k, m - 1)
    nbrs = np.argsort(d2, axis=1, kind="stable")[:, :kk]
    radius2 = beta**2 * np.einsum("ij,ij->i", wh, wh)
    rows = np.repeat(np.arange(m), kk)
    cols = nbrs.ravel()
    ok = d2[rows, cols] < radius2[rows]
    a, b = rows[ok], cols[ok]
    pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    return np.unique(pairs, axis=0)


def rknn(cands: Sequence, k: int = 5, beta: float = 5.0) -> list[CharPair]:
    """:func:`rknn_pairs` over candidates exposing ``cx, cy, w, h``."""
    centers = np.array([[c.cx, c.cy] for c in cands]).reshape(-1, 2)
    sizes = np.array([[c.w, c.h] for c in cands]).reshape(-1, 2)
    pairs = rknn_pairs(centers, sizes, k, beta)
    dist = np.hypot(*(centers[pairs[:, 0]] - centers[pairs[:, 1]]).T) if len(pairs) else []
    return [CharPair(int(i), int(j), float(dd)) for (i, j), dd in zip(pairs, dist)]


def assign_groups(
    cand_boxes: np.ndarray,
    gt_boxes: np.ndarray,
    gt_groups: Sequence[int],
    min_iou: float = 0.5,
) -> np.ndarray:
    """Group id of the best-overlapping ground-truth char, or ``BACKGROUND``."""
    cand_boxes = np.asarray(cand_boxes, dtype=float).reshape(-1, 4)
    out = np.full(len(cand_boxes), BACKGROUND, dtype=int)
    if len(cand_boxes) == 0 or len(gt_boxes) == 0:
        return out
    ious = iou_matrix(cand_boxes, gt_boxes)
    best = np.argmax(ious, axis=1)
    hit = ious[np.arange(len(cand_boxes)), best] > min_iou
    out[hit] = np.asarray(gt_groups, dtype=int)[best[hit]]
    return out


def pair_labels(pairs: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """1 when both endpoints share a non-background group, else 0."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    groups = np.asarray(groups)
    gi, gj = groups[pairs[:, 0]], groups[pairs[:, 1]]
    return ((gi == gj) & (gi != BACKGROUND)).astype(int)


def label_pairs(pairs: list[CharPair], groups: Sequence[int]) -> list[CharPair]:
    idx = np.array([[p.i, p.j] for p in pairs], dtype=int).reshape(-1, 2)
    labels = pair_labels(idx, np.asarray(groups))
    for p, lab in zip(pairs, labels):
        p.label = int(lab)
    return pairs
