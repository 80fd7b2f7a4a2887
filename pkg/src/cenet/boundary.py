"""Turn a character group into a rectangle, quadrangle or curved polygon."""

from __future__ import annotations

import enum
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoxAA, min_area_rect


class EmptyGroup(ValueError):
    pass


class BoundaryMode(enum.Enum):
    RECT = "rect"
    QUAD = "quad"
    POLY = "poly"


def _as_boxes(members) -> np.ndarray:
    if isinstance(members, np.ndarray):
        return members.reshape(-1, 4).astype(float)
    rows = [m.as_xyxy() if hasattr(m, "as_xyxy") else m for m in members]
    return np.asarray(rows, dtype=float).reshape(-1, 4)


def _box_corners(boxes: np.ndarray) -> np.ndarray:
    x0, y0, x1, y1 = boxes.T
    return np.concatenate(
        [np.stack([x0, y0], 1), np.stack([x1, y0], 1), np.stack([x1, y1], 1), np.stack([x0, y1], 1)]
    )


def order_along_path(centers: np.ndarray, circular_ratio: float = 0.5) -> np.ndarray:
    """Order member centers along the text.

    Sort by projection onto the principal axis; when the spread is nearly
    isotropic (minor/major variance above ``circular_ratio``) chain greedily
    by nearest neighbour starting from the extremal point instead.
    """
    m = len(centers)
    if m < 3:
        dominant = 0 if np.ptp(centers[:, 0]) >= np.ptp(centers[:, 1]) else 1
        return np.argsort(centers[:, dominant], kind="stable")
    c = centers - centers.mean(axis=0)
    evals, evecs = np.linalg.eigh(c.T @ c)
    axis = evecs[:, 1]
    if abs(axis[0]) >= abs(axis[1]):
        axis = axis if axis[0] > 0 else -axis
    else:
        axis = axis if axis[1] > 0 else -axis
    proj = c @ axis
    if evals[1] > 0 and evals[0] / evals[1] <= circular_ratio:
        return np.argsort(proj, kind="stable")
    start = int(np.argmin(proj))
    order, left = [start], set(range(m)) - {start}
    while left:
        last = centers[order[-1]]
        nxt = min(left, key=lambda j: (float(np.hypot(*(centers[j] - last))), j))
        order.append(nxt)
        left.remove(nxt)
    return np.array(order)


def _fit_line(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and unit direction (pointing from first to last point)."""
    mean = pts.mean(axis=0)
    if len(pts) == 2:
        u = pts[1] - pts[0]
    else:
        c = pts - mean
        _, evecs = np.linalg.eigh(c.T @ c)
        u = evecs[:, 1]
    norm = np.hypot(*u)
    u = np.array([1.0, 0.0]) if norm == 0 else u / norm
    if (pts[-1] - pts[0]) @ u < 0:
        u = -u
    return mean, u


def poly_boundary(boxes: np.ndarray, seg_chars: int = 5, circular_ratio: float = 0.5) -> np.ndarray:
    """Piecewise-linear band around the character path.

    Members are ordered along the path and cut into consecutive segments of
    at most ``seg_chars`` characters sharing their end characters. Each
    segment gets a total-least-squares line; the path runs through the
    projected segment ends (joints averaged) and is stretched by half a
    character at both ends. Each path vertex is pushed to both sides by half
    the local cross-path character extent plus the largest center residual
    of the adjacent segments.
    """
    m = len(boxes)
    centers = np.stack([(boxes[:, 0] + boxes[:, 2]) / 2, (boxes[:, 1] + boxes[:, 3]) / 2], axis=1)
    wh = np.stack([boxes[:, 2] - boxes[:, 0], boxes[:, 3] - boxes[:, 1]], axis=1)
    order = order_along_path(centers, circular_ratio)
    centers, wh = centers[order], wh[order]

    step = max(seg_chars - 1, 1)
    starts = list(range(0, max(m - 1, 1), step))
    segs = [(a, min(a + step, m - 1)) for a in starts]
    lines = []
    for a, b in segs:
        pts = centers[a : b + 1]
        mean, u = _fit_line(pts)
        n = np.array([-u[1], u[0]])
        resid = np.abs((pts - mean) @ n).max()
        p0 = mean + ((centers[a] - mean) @ u) * u
        p1 = mean + ((centers[b] - mean) @ u) * u
        half = 0.5 * (wh[a : b + 1, 0] * abs(n[0]) + wh[a : b + 1, 1] * abs(n[1]))
        lines.append((p0, p1, u, n, float(half.mean()) + float(resid)))

    verts = [lines[0][0]]
    normals = [lines[0][3]]
    thick = [lines[0][4]]
    for left, right in zip(lines[:-1], lines[1:]):
        verts.append((left[1] + right[0]) / 2)
        nn = left[3] + right[3]
        normals.append(nn / max(np.hypot(*nn), 1e-12))
        thick.append(max(left[4], right[4]))
    verts.append(lines[-1][1])
    normals.append(lines[-1][3])
    thick.append(lines[-1][4])
    verts = np.array(verts, dtype=float)
    normals = np.array(normals)
    thick = np.array(thick)

    u0, u1 = lines[0][2], lines[-1][2]
    verts[0] -= u0 * 0.5 * (wh[0, 0] * abs(u0[0]) + wh[0, 1] * abs(u0[1]))
    verts[-1] += u1 * 0.5 * (wh[-1, 0] * abs(u1[0]) + wh[-1, 1] * abs(u1[1]))

    top = verts - normals * thick[:, None]
    bottom = verts + normals * thick[:, None]
    return np.concatenate([top, bottom[::-1]])


def format_boundary(members, mode: BoundaryMode | str = BoundaryMode.POLY, seg_chars: int = 5) -> np.ndarray:
    """Boundary of a character group as an ``(K, 2)`` vertex array.

    ``members`` is a sequence of candidates (anything with ``as_xyxy``) or an
    ``(M, 4)`` box array.
    """
    mode = BoundaryMode(mode)
    boxes = _as_boxes(members)
    if len(boxes) == 0:
        raise EmptyGroup("cannot format an empty group")
    if mode is BoundaryMode.RECT or len(boxes) == 1:
        return BoxAA.bounding(_box_corners(boxes)).corners()
    if mode is BoundaryMode.QUAD:
        return min_area_rect(_box_corners(boxes))
    return poly_boundary(boxes, seg_chars)


def format_line(poly: np.ndarray, precision: int = 2) -> str:
    """Comma-separated ``x1,y1,...,xk,yk`` line (ICDAR quad / Total-Text style)."""
    return ",".join(f"{v:.{precision}f}" for v in np.asarray(poly, dtype=float).ravel())


def write_boundaries(path, polys: Iterable[np.ndarray], precision: int = 2) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in polys:
            fh.write(format_line(p, precision) + "\n")


def read_boundaries(path) -> list[np.ndarray]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            vals = [float(v) for v in line.split(",")]
            out.append(np.array(vals).reshape(-1, 2))
    return out


def group_boundaries(cands: Sequence, groups, mode, seg_chars: int = 5) -> list[np.ndarray]:
    return [format_boundary([cands[i] for i in g.members], mode, seg_chars) for g in groups]
