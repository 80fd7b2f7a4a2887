"""Region matching, precision/recall/F and (s, d) threshold search."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .config import PipelineConfig
from .decode import PredictionMaps
from .geometry import rasterize_polygon
from .pipeline import candidates_from_maps, group_candidates, local_pairs


@dataclass
class Matching:
    pairs: list[tuple[int, int]]
    n_pred: int
    n_gt: int
    ious: list[float] = field(default_factory=list)

    @property
    def n_match(self) -> int:
        return len(self.pairs)


@dataclass
class PRF:
    precision: float
    recall: float
    f_measure: float
    n_match: int = 0
    n_pred: int = 0
    n_gt: int = 0


def polygon_iou_matrix(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise IoU by rasterizing every polygon once on a shared 1 px grid."""
    if not preds or not gts:
        return np.zeros((len(preds), len(gts)))
    polys = [np.asarray(p, dtype=float) for p in (*preds, *gts)]
    pts = np.concatenate(polys)
    lo = np.floor(pts.min(axis=0)).astype(int)
    hi = np.ceil(pts.max(axis=0)).astype(int)
    shape = (max(int(hi[1] - lo[1]), 1), max(int(hi[0] - lo[0]), 1))
    masks = np.stack([rasterize_polygon(p, shape, offset=lo).ravel() for p in polys]).astype(np.float64)
    mp, mg = masks[: len(preds)], masks[len(preds) :]
    inter = mp @ mg.T
    union = mp.sum(1)[:, None] + mg.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def match_regions(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], t_iou: float = 0.5) -> Matching:
    """Greedy one-to-one matching in descending IoU; a pair needs IoU > t_iou."""
    ious = polygon_iou_matrix(preds, gts)
    pi, gi = np.nonzero(ious > t_iou)
    order = np.lexsort((gi, pi, -ious[pi, gi]))
    used_p, used_g = set(), set()
    pairs, vals = [], []
    for k in order:
        p, g = int(pi[k]), int(gi[k])
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g))
        vals.append(float(ious[p, g]))
    return Matching(pairs, len(preds), len(gts), vals)


def prf_counts(n_match: int, n_pred: int, n_gt: int) -> PRF:
    # no predictions: precision is 1 by convention
    p = n_match / n_pred if n_pred else 1.0
    r = n_match / n_gt if n_gt else 1.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f, n_match, n_pred, n_gt)


def prf(matching: Matching | Sequence[Matching]) -> PRF:
    """P/R/F of one matching, or micro-averaged over several."""
    ms = [matching] if isinstance(matching, Matching) else list(matching)
    return prf_counts(sum(m.n_match for m in ms), sum(m.n_pred for m in ms), sum(m.n_gt for m in ms))


@dataclass
class SearchResult:
    s: float
    d: float
    f_measure: float
    table: list[tuple[float, float, float]]


def grid_search(
    maps: Sequence[PredictionMaps],
    gts: Sequence[Sequence[np.ndarray]],
    s_grid: Sequence[float],
    d_grid: Sequence[float],
    cfg: PipelineConfig,
    t_iou: float = 0.5,
) -> SearchResult:
    """Exhaustive (s, d) search over precomputed maps.

    Ties go to the smaller s, then the smaller d.
    """
    if not len(s_grid) or not len(d_grid):
        raise ValueError("empty grid")
    table = []
    for s in sorted(s_grid):
        per_image = []
        for m in maps:
            cands = candidates_from_maps(m, s, cfg.nms)
            pairs, dist = local_pairs(cands, cfg.k, cfg.beta)
            per_image.append((cands, pairs, dist))
        for d in sorted(d_grid):
            ms = []
            for (cands, pairs, dist), gt in zip(per_image, gts):
                groups = group_candidates(cands, pairs, dist, d, cfg)
                ms.append(match_regions([g.boundary for g in groups], gt, t_iou))
            table.append((float(s), float(d), prf(ms).f_measure))
    best = table[0]
    for row in table[1:]:
        if row[2] > best[2]:
            best = row
    return SearchResult(best[0], best[1], best[2], table)


def write_heatmap_csv(path, table: Sequence[tuple[float, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["s", "d", "f_measure"])
        for s, d, f in table:
            wr.writerow([f"{s:.4f}", f"{d:.4f}", f"{f:.6f}"])


def scene_report(names: Sequence[str], matchings: Sequence[Matching]) -> dict:
    rows = []
    for name, m in zip(names, matchings):
        rows.append({"scene": name, **asdict(prf(m))})
    # sort so the aggregate does not depend on input file order
    rows.sort(key=lambda r: r["scene"])
    return {"scenes": rows, "aggregate": asdict(prf(list(matchings)))}


def write_report(report: dict, json_path=None, csv_path=None) -> None:
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if csv_path is not None:
        cols = ["scene", "precision", "recall", "f_measure", "n_match", "n_pred", "n_gt"]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for r in report["scenes"] + [{"scene": "__all__", **report["aggregate"]}]:
                wr.writerow([r["scene"]] + [f"{r[c]:.6f}" if isinstance(r[c], float) else r[c] for c in cols[1:]])
