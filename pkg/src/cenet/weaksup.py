"""Character supervision from word/line boundaries and the model's own predictions.

Each annotated region is cut into ``N`` coarse boxes along its center line.
A coarse box that overlaps a confident prediction takes the prediction's
extent along the text and keeps its own extent across the text.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import BoxAA, Orientation, divide_along_centerline, iou_matrix, orientation
from .model import render_targets

IGNORE_TRANSCRIPT = "###"


@dataclass
class Annotation:
    boundary: np.ndarray
    n_chars: int
    group_id: int
    ignore: bool = False
    transcript: str = ""

    def __post_init__(self):
        self.boundary = np.asarray(self.boundary, dtype=float).reshape(-1, 2)
        if self.n_chars < 1 and not self.ignore:
            raise ValueError("an annotation needs at least one character")


class Source(enum.Enum):
    COARSE = "coarse"
    RECTIFIED = "rectified"


@dataclass(frozen=True)
class FineCharBox:
    box: BoxAA
    source: Source
    group_id: int


@dataclass
class WeakTargets:
    fine_chars: list[FineCharBox]
    coarse_chars: list[BoxAA]
    ignore_regions: list[np.ndarray] = field(default_factory=list)

    @property
    def boxes(self) -> np.ndarray:
        return np.array([f.box.as_array() for f in self.fine_chars]).reshape(-1, 4)

    @property
    def groups(self) -> np.ndarray:
        return np.array([f.group_id for f in self.fine_chars], dtype=int)


def coarse_chars(a: Annotation) -> list[BoxAA]:
    return divide_along_centerline(a.boundary, a.n_chars)


def match_index(
    c: BoxAA,
    pred_boxes: np.ndarray,
    pred_scores: np.ndarray,
    t1: float = 0.2,
    t2: float = 0.5,
) -> int | None:
    """Index of the prediction that rectifies coarse box ``c``, if any.

    A prediction qualifies with score above ``t1`` and IoU above ``t2``; the
    best IoU wins, then the higher score, then the lower index.
    """
    pred_boxes = np.asarray(pred_boxes, dtype=float).reshape(-1, 4)
    if len(pred_boxes) == 0:
        return None
    scores = np.asarray(pred_scores, dtype=float)
    ious = iou_matrix(c.as_array()[None], pred_boxes)[0]
    ok = np.flatnonzero((scores > t1) & (ious > t2))
    if len(ok) == 0:
        return None
    return int(min(ok, key=lambda k: (-ious[k], -scores[k], k)))


def match_pred(c: BoxAA, preds: Sequence, t1: float = 0.2, t2: float = 0.5):
    """The candidate matched to ``c`` (see :func:`match_index`), or None."""
    boxes = np.array([p.as_xyxy() for p in preds]).reshape(-1, 4)
    k = match_index(c, boxes, [p.score for p in preds], t1, t2)
    return None if k is None else preds[k]


def rectify(c: BoxAA, m: BoxAA | None, o: Orientation, group_id: int = 0) -> FineCharBox:
    if m is None:
        return FineCharBox(c, Source.COARSE, group_id)
    (ccx, ccy), (mcx, mcy) = c.center, m.center
    if o is Orientation.HORIZONTAL:
        box = BoxAA.from_center(mcx, ccy, m.width, c.height)
    else:
        box = BoxAA.from_center(ccx, mcy, c.width, m.height)
    return FineCharBox(box, Source.RECTIFIED, group_id)


def fine_chars_for(
    a: Annotation,
    pred_boxes: np.ndarray,
    pred_scores: np.ndarray,
    t1: float = 0.2,
    t2: float = 0.5,
) -> tuple[list[BoxAA], list[FineCharBox]]:
    coarse = coarse_chars(a)
    o = orientation(BoxAA.bounding(a.boundary))
    fine = []
    for c in coarse:
        k = match_index(c, pred_boxes, pred_scores, t1, t2)
        m = None if k is None else BoxAA(*pred_boxes[k])
        fine.append(rectify(c, m, o, a.group_id))
    return coarse, fine


def build_weak_targets(
    annos: Sequence[Annotation],
    pred_boxes: np.ndarray | None = None,
    pred_scores: np.ndarray | None = None,
    t1: float = 0.2,
    t2: float = 0.5,
) -> WeakTargets:
    """Coarse-to-fine character boxes for every non-ignored annotation."""
    pb = np.zeros((0, 4)) if pred_boxes is None else np.asarray(pred_boxes, dtype=float).reshape(-1, 4)
    ps = np.zeros(0) if pred_scores is None else np.asarray(pred_scores, dtype=float)
    fine, coarse, ignore = [], [], []
    for a in annos:
        if a.ignore:
            ignore.append(a.boundary)
            continue
        c, f = fine_chars_for(a, pb, ps, t1, t2)
        coarse.extend(c)
        fine.extend(f)
    return WeakTargets(fine, coarse, ignore)


def build_targets(annos, preds, shape, stride: int = 4, t1: float = 0.2, t2: float = 0.5):
    """Rectified char boxes rendered into detection targets.

    ``preds`` is a list of candidates from the current forward pass (may be
    empty). Returns ``(DetectionTargets, WeakTargets)``.
    """
    pb = np.array([p.as_xyxy() for p in preds]).reshape(-1, 4)
    ps = np.array([p.score for p in preds])
    weak = build_weak_targets(annos, pb, ps, t1, t2)
    targets = render_targets(weak.boxes, shape, stride, ignore_regions=weak.ignore_regions)
    return targets, weak


def parse_annotation_line(line: str, group_id: int) -> Annotation | None:
    """``x1,y1,...,xk,yk,transcript``; the transcript may itself contain commas."""
    line = line.strip().lstrip("﻿")
    if not line:
        return None
    parts = line.split(",")
    coords = []
    idx = 0
    while idx < len(parts):
        try:
            coords.append(float(parts[idx]))
        except ValueError:
            break
        idx += 1
    if len(coords) % 2 == 1:
        # an odd count means the transcript started with a number
        coords.pop()
        idx -= 1
    transcript = ",".join(parts[idx:])
    ignore = transcript == IGNORE_TRANSCRIPT
    n = 0 if ignore else len(transcript)
    return Annotation(np.array(coords).reshape(-1, 2), max(n, 1) if not ignore else 0, group_id, ignore, transcript)


def read_annotations(path) -> list[Annotation]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            a = parse_annotation_line(line, len(out))
            if a is not None:
                out.append(a)
    return out


def write_annotations(path, annos: Sequence[Annotation], precision: int = 3) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a in annos:
            coords = ",".join(f"{v:.{precision}f}" for v in a.boundary.ravel())
            text = IGNORE_TRANSCRIPT if a.ignore else (a.transcript or "x" * a.n_chars)
            fh.write(f"{coords},{text}\n")
