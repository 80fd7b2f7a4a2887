"""Dense prediction maps to character candidates."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .geometry import BoxAA, iou_matrix


class ShapeMismatch(ValueError):
    pass


@dataclass
class PredictionMaps:
    """Per-image network output at ``1/stride`` resolution.

    ``conf`` is ``(H, W)`` in [0, 1]; ``offsets`` is ``(4, H, W)`` holding
    the distances to the left, top, right and bottom box sides in map
    pixels; ``emb`` is ``(D, H, W)``.
    """

    conf: np.ndarray
    offsets: np.ndarray
    emb: np.ndarray
    stride: int = 4

    def __post_init__(self):
        self.conf = np.asarray(self.conf, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.emb = np.asarray(self.emb, dtype=float)
        if self.conf.ndim != 2:
            raise ShapeMismatch(f"conf must be 2-D, got {self.conf.shape}")
        hw = self.conf.shape
        if self.offsets.shape != (4, *hw):
            raise ShapeMismatch(f"offsets {self.offsets.shape} vs conf {hw}")
        if self.emb.ndim != 3 or self.emb.shape[1:] != hw or self.emb.shape[0] < 1:
            raise ShapeMismatch(f"emb {self.emb.shape} vs conf {hw}")
        if int(self.stride) < 1:
            raise ValueError("stride must be >= 1")

    @property
    def shape(self) -> tuple[int, int]:
        return self.conf.shape


@dataclass(frozen=True)
class CharCandidate:
    score: float
    cx: float
    cy: float
    w: float
    h: float
    embedding: np.ndarray | None = field(default=None, compare=False)
    clamped: bool = False

    @property
    def box(self) -> BoxAA:
        return BoxAA.from_center(self.cx, self.cy, self.w, self.h)

    def as_xyxy(self) -> np.ndarray:
        return np.array(
            [self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2]
        )

    def to_record(self) -> dict:
        rec = {"score": self.score, "cx": self.cx, "cy": self.cy, "w": self.w, "h": self.h}
        rec["emb"] = [] if self.embedding is None else [float(v) for v in self.embedding]
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "CharCandidate":
        emb = rec.get("emb")
        return cls(
            float(rec["score"]),
            float(rec["cx"]),
            float(rec["cy"]),
            float(rec["w"]),
            float(rec["h"]),
            np.asarray(emb, dtype=float) if emb else None,
        )


def boxes_of(cands: Iterable[CharCandidate]) -> np.ndarray:
    rows = [c.as_xyxy() for c in cands]
    return np.array(rows).reshape(-1, 4)


def decode_candidates(maps: PredictionMaps, s: float) -> list[CharCandidate]:
    """One candidate per map cell whose confidence exceeds ``s``.

    Cell ``(x, y)`` predicts corners ``(x - l, y - t)`` and ``(x + r, y + b)``
    in map space; everything is then scaled by the stride.
    """
    ys, xs = np.nonzero(maps.conf > s)
    stride = float(maps.stride)
    l, t, r, b = (maps.offsets[k, ys, xs] for k in range(4))
    x0, y0 = (xs - l) * stride, (ys - t) * stride
    x1, y1 = (xs + r) * stride, (ys + b) * stride
    w, h = x1 - x0, y1 - y0
    out = []
    for k in np.flatnonzero((w > 0) & (h > 0)):
        out.append(
            CharCandidate(
                float(maps.conf[ys[k], xs[k]]),
                float((x0[k] + x1[k]) / 2),
                float((y0[k] + y1[k]) / 2),
                float(w[k]),
                float(h[k]),
            )
        )
    return out


def nms(cands: list[CharCandidate], t_nms: float = 0.5) -> list[CharCandidate]:
    """Greedy suppression in descending score order.

    Ties are ordered by ``(x, y)`` of the center so the output is fully
    deterministic.
    """
    if not cands:
        return []
    order = sorted(range(len(cands)), key=lambda i: (-cands[i].score, cands[i].cx, cands[i].cy))
    boxes = boxes_of(cands)[order]
    # a full IoU matrix is faster for small inputs, rows on demand for large
    full = iou_matrix(boxes, boxes) if len(boxes) <= 1500 else None
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for pos in range(len(order)):
        if not alive[pos]:
            continue
        keep.append(order[pos])
        if full is not None:
            alive &= full[pos] <= t_nms
            continue
        rest = pos + 1 + np.flatnonzero(alive[pos + 1 :])
        if len(rest):
            alive[rest] = iou_matrix(boxes[pos], boxes[rest])[0] <= t_nms
    return [cands[i] for i in keep]


def bilinear_weights(mx: np.ndarray, my: np.ndarray, shape: tuple[int, int]):
    """Corner indices and weights for bilinear sampling at map points.

    Points outside the map are clamped to the border. Returns
    ``(ys, xs, weights, clamped)`` with ``ys``/``xs``/``weights`` of shape
    ``(N, 4)``.
    """
    h, w = shape
    mx, my = np.asarray(mx, dtype=float), np.asarray(my, dtype=float)
    cx, cy = np.clip(mx, 0, w - 1), np.clip(my, 0, h - 1)
    clamped = (cx != mx) | (cy != my)
    x0, y0 = np.floor(cx).astype(int), np.floor(cy).astype(int)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = cx - x0, cy - y0
    xs = np.stack([x0, x1, x0, x1], axis=1)
    ys = np.stack([y0, y0, y1, y1], axis=1)
    wts = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    return ys, xs, wts, clamped


def sample_embeddings(emb: np.ndarray, centers: np.ndarray, stride: float) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear sample ``(D, H, W)`` maps at image-space centers -> ``(N, D)``."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    ys, xs, wts, clamped = bilinear_weights(centers[:, 0] / stride, centers[:, 1] / stride, emb.shape[1:])
    vals = emb[:, ys, xs]  # (D, N, 4)
    return np.einsum("dnk,nk->nd", vals, wts), clamped


def extract_embeddings(maps: PredictionMaps, cands: list[CharCandidate]) -> list[CharCandidate]:
    """Fill each candidate's embedding by sampling the map at its center."""
    if not cands:
        return []
    centers = np.array([[c.cx, c.cy] for c in cands])
    vecs, clamped = sample_embeddings(maps.emb, centers, maps.stride)
    return [replace(c, embedding=vecs[i].copy(), clamped=bool(clamped[i])) for i, c in enumerate(cands)]


def write_candidates_jsonl(path, cands: Iterable[CharCandidate]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in cands:
            fh.write(json.dumps(c.to_record(), allow_nan=False) + "\n")


def read_candidates_jsonl(path) -> list[CharCandidate]:
    with open(path, encoding="utf-8") as fh:
        return [CharCandidate.from_record(json.loads(line)) for line in fh if line.strip()]
