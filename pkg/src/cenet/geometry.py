"""Planar primitives: axis-aligned boxes, polygons and center lines.

Polygons are plain ``(K, 2)`` float arrays of ``(x, y)`` vertices in image
coordinates (x to the right, y down). Polylines use the same layout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class MalformedPolygon(ValueError):
    """Raised when a polygon cannot be split into two long-side chains."""


class Orientation(enum.Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass(frozen=True)
class BoxAA:
    """Axis-aligned box with continuous coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"invalid box {self!r}")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoxAA":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @classmethod
    def bounding(cls, points) -> "BoxAA":
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return cls(float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1]))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=float)

    def corners(self) -> np.ndarray:
        """Corners clockwise from top-left (y axis pointing down)."""
        return np.array(
            [
                [self.x_min, self.y_min],
                [self.x_max, self.y_min],
                [self.x_max, self.y_max],
                [self.x_min, self.y_max],
            ]
        )


def iou(a: BoxAA, b: BoxAA) -> float:
    """Intersection over union of two axis-aligned boxes.

    Degenerate (zero-area) inputs give 0.
    """
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(N, 4)`` and ``(M, 4)`` arrays of x0, y0, x1, y1."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def orientation(b: BoxAA) -> Orientation:
    # square regions count as horizontal
    return Orientation.HORIZONTAL if b.width >= b.height else Orientation.VERTICAL


def signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive for counter-clockwise in a y-up frame."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly: np.ndarray) -> float:
    return abs(signed_area(poly))


def clean_polygon(poly, tol: float = 1e-12) -> np.ndarray:
    """Drop consecutive duplicate vertices (including the closing one)."""
    p = np.asarray(poly, dtype=float).reshape(-1, 2)
    keep = [p[0]]
    for v in p[1:]:
        if np.hypot(*(v - keep[-1])) > tol:
            keep.append(v)
    if len(keep) > 1 and np.hypot(*(keep[0] - keep[-1])) <= tol:
        keep.pop()
    return np.array(keep)


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule containment test for many points at once."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    v = np.asarray(poly, dtype=float)
    x, y = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = v[:, 0][None, :], v[:, 1][None, :]
    x1, y1 = np.roll(v[:, 0], -1)[None, :], np.roll(v[:, 1], -1)[None, :]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    hit = crosses & (x < x_at)
    return (hit.sum(axis=1) % 2) == 1


def point_segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(pts)) if denom == 0 else np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.hypot(*(pts - proj).T)


def distance_to_boundary(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    v = np.asarray(poly, dtype=float)
    d = [point_segment_distance(points, v[i], v[(i + 1) % len(v)]) for i in range(len(v))]
    return np.min(d, axis=0)


def rasterize_polygon(poly: np.ndarray, shape: tuple[int, int], offset=(0, 0)) -> np.ndarray:
    """Boolean mask of 1 px cells whose centers fall inside ``poly``.

    Cell ``[r, c]`` covers ``[c, c+1) x [r, r+1)`` shifted by ``offset``.
    """
    h, w = shape
    v = np.asarray(poly, dtype=float)
    out = np.zeros((h, w), dtype=bool)
    # only cells inside the polygon's bounding box can be hit
    c0 = max(int(np.floor(v[:, 0].min() - offset[0] - 0.5)), 0)
    c1 = min(int(np.ceil(v[:, 0].max() - offset[0] - 0.5)) + 1, w)
    r0 = max(int(np.floor(v[:, 1].min() - offset[1] - 0.5)), 0)
    r1 = min(int(np.ceil(v[:, 1].max() - offset[1] - 0.5)) + 1, h)
    if c0 >= c1 or r0 >= r1:
        return out
    ys, xs = np.mgrid[r0:r1, c0:c1]
    centers = np.stack([xs.ravel() + 0.5 + offset[0], ys.ravel() + 0.5 + offset[1]], axis=1)
    out[r0:r1, c0:c1] = points_in_polygon(centers, v).reshape(r1 - r0, c1 - c0)
    return out


def polygon_iou(a: np.ndarray, b: np.ndarray) -> float:
    """IoU of two simple (possibly concave) polygons by 1 px rasterization."""
    pa, pb = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    lo = np.floor(np.minimum(pa.min(axis=0), pb.min(axis=0))).astype(int)
    hi = np.ceil(np.maximum(pa.max(axis=0), pb.max(axis=0))).astype(int)
    shape = (int(hi[1] - lo[1]), int(hi[0] - lo[0]))
    if shape[0] <= 0 or shape[1] <= 0:
        return 0.0
    ma = rasterize_polygon(pa, shape, offset=lo)
    mb = rasterize_polygon(pb, shape, offset=lo)
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union if union else 0.0


def polyline_length(line: np.ndarray) -> float:
    return float(np.hypot(*np.diff(line, axis=0).T).sum())


def _principal_axis(points: np.ndarray) -> tuple[np.ndarray, bool]:
    """Unit principal axis and whether the spread is isotropic."""
    c = points - points.mean(axis=0)
    cov = c.T @ c / len(points)
    evals, evecs = np.linalg.eigh(cov)
    axis = evecs[:, 1]
    # dominant component positive: left->right, or top->bottom for vertical text
    if abs(axis[0]) >= abs(axis[1]):
        axis = axis if axis[0] > 0 else -axis
    else:
        axis = axis if axis[1] > 0 else -axis
    isotropic = evals[1] - evals[0] <= 1e-9 * max(evals[1], 1e-300)
    return axis, bool(isotropic)


def _resample(chain: np.ndarray, n: int) -> np.ndarray:
    seg = np.hypot(*np.diff(chain, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(chain[:1], n, axis=0)
    t = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(t, s, chain[:, 0]), np.interp(t, s, chain[:, 1])], axis=1)


def split_chains(poly) -> tuple[np.ndarray, np.ndarray]:
    """Split a polygon into two long-side chains running between its end edges.

    The end edges are the non-adjacent pair whose midpoints lie farthest
    apart along the principal axis of the vertices (plain Euclidean distance
    when that axis is undefined). Ties go to the pair with the lowest edge
    index. Both chains are returned in the same direction, from end to end.
    """
    p = clean_polygon(poly)
    n = len(p)
    if n < 4 or polygon_area(p) <= 0:
        raise MalformedPolygon(f"cannot split polygon with {n} vertices")
    mids = (p + np.roll(p, -1, axis=0)) / 2.0
    axis, isotropic = _principal_axis(p)
    best, best_score = None, -np.inf
    scale = float(np.ptp(p, axis=0).max())
    for a in range(n):
        for b in range(a + 2, n):
            if a == 0 and b == n - 1:
                continue
            delta = mids[b] - mids[a]
            score = float(np.hypot(*delta)) if isotropic else abs(float(delta @ axis))
            if score > best_score + 1e-9 * scale:
                best, best_score = (a, b), score
    if best is None or best_score <= 0:
        raise MalformedPolygon("no separable end edges")
    a, b = best
    chain1 = p[a + 1 : b + 1]
    chain2 = np.concatenate([p[b + 1 :], p[: a + 1]])[::-1]
    return chain1, chain2


def _center_line_with_width(poly) -> tuple[np.ndarray, np.ndarray]:
    c1, c2 = split_chains(poly)
    if len(c1) != len(c2):
        m = max(len(c1), len(c2))
        c1, c2 = _resample(c1, m), _resample(c2, m)
    line = (c1 + c2) / 2.0
    gap = c1 - c2
    keep = np.concatenate([[True], np.hypot(*np.diff(line, axis=0).T) > 1e-12])
    line, gap = line[keep], gap[keep]
    if len(line) < 2:
        raise MalformedPolygon("center line collapsed to a point")
    axis, _ = _principal_axis(np.asarray(clean_polygon(poly)))
    if (line[-1] - line[0]) @ axis < 0:
        line, gap = line[::-1], gap[::-1]
    # thickness measured perpendicular to the local center-line direction
    seg = np.diff(line, axis=0)
    seg /= np.hypot(*seg.T)[:, None]
    tang = np.vstack([seg[:1], seg[:-1] + seg[1:], seg[-1:]])
    tang /= np.maximum(np.hypot(*tang.T), 1e-300)[:, None]
    width = np.abs(tang[:, 0] * gap[:, 1] - tang[:, 1] * gap[:, 0])
    return line, width


def center_line(poly) -> np.ndarray:
    """Polyline of midpoints between the two long-side chains of ``poly``."""
    return _center_line_with_width(poly)[0]


def divide_along_centerline(poly, n: int) -> list[BoxAA]:
    """Cut a text region into ``n`` coarse character boxes.

    Box centers sit at arc-length-uniform samples of the center line; each
    box spans ``length / n`` along the line and the local region thickness
    across it, and is then replaced by its axis-aligned bounding box.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    line, width = _center_line_with_width(poly)
    seg_len = np.hypot(*np.diff(line, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = s[-1]
    step = total / n
    boxes = []
    for k in range(n):
        t = (k + 0.5) * step
        i = int(np.clip(np.searchsorted(s, t, side="right") - 1, 0, len(seg_len) - 1))
        frac = (t - s[i]) / seg_len[i]
        cx, cy = line[i] + frac * (line[i + 1] - line[i])
        thick = width[i] + frac * (width[i + 1] - width[i])
        ux, uy = (line[i + 1] - line[i]) / seg_len[i]
        half_w = 0.5 * (step * abs(ux) + thick * abs(uy))
        half_h = 0.5 * (step * abs(uy) + thick * abs(ux))
        boxes.append(BoxAA(cx - half_w, cy - half_h, cx + half_w, cy + half_h))
    return boxes


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; counter-clockwise in a y-up frame."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).reshape(-1, 2))))
    if len(pts) <= 2:
        return np.array(pts)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for q in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], q) <= 0:
            lower.pop()
        lower.append(q)
    for q in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], q) <= 0:
            upper.pop()
        upper.append(q)
    return np.array(lower[:-1] + upper[:-1])


def order_clockwise_from_top_left(quad: np.ndarray) -> np.ndarray:
    """Reorder 4 points clockwise on screen (y down), starting at min x+y."""
    q = np.asarray(quad, dtype=float)
    c = q.mean(axis=0)
    ang = np.arctan2(q[:, 1] - c[1], q[:, 0] - c[0])
    q = q[np.argsort(ang, kind="stable")]
    start = int(np.argmin(q[:, 0] + q[:, 1]))
    return np.roll(q, -start, axis=0)


def min_area_rect(points: np.ndarray) -> np.ndarray:
    """Minimum-area enclosing rectangle (rotating edge directions of the hull)."""
    hull = convex_hull(points)
    if len(hull) < 3:
        return order_clockwise_from_top_left(BoxAA.bounding(np.atleast_2d(hull)).corners())
    best, best_area = None, np.inf
    for i in range(len(hull)):
        e = hull[(i + 1) % len(hull)] - hull[i]
        norm = np.hypot(*e)
        if norm == 0:
            continue
        u = e / norm
        v = np.array([-u[1], u[0]])
        pu, pv = hull @ u, hull @ v
        area = np.ptp(pu) * np.ptp(pv)
        if area < best_area - 1e-12:
            best_area = area
            best = np.array(
                [
                    pu.min() * u + pv.min() * v,
                    pu.max() * u + pv.min() * v,
                    pu.max() * u + pv.max() * v,
                    pu.min() * u + pv.max() * v,
                ]
            )
    return order_clockwise_from_top_left(best)
