"""Slow, obviously-correct reference implementations used by the tests."""

import numpy as np


def box_iou(a, b):
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def raster_iou(a, b, n=1000):
    """IoU by counting cell centers of an n x n grid over the union's bounding box."""
    hits = []
    for ax in (0, 1):
        lo, hi = min(a[ax], b[ax]), max(a[ax + 2], b[ax + 2])
        xs = lo + (np.arange(n) + 0.5) * (hi - lo) / n
        hits.append(((xs >= a[ax]) & (xs < a[ax + 2]), (xs >= b[ax]) & (xs < b[ax + 2])))
    (ax_, bx), (ay, by) = hits
    inter = np.sum(ax_ & bx) * np.sum(ay & by)
    union = np.sum(ax_) * np.sum(ay) + np.sum(bx) * np.sum(by) - inter
    return inter / union if union else 0.0


def nms(records, t):
    """records: list of (score, cx, cy, box); returns kept indices."""
    order = sorted(range(len(records)), key=lambda i: (-records[i][0], records[i][1], records[i][2]))
    kept = []
    for i in order:
        if all(box_iou(records[i][3], records[k][3]) <= t for k in kept):
            kept.append(i)
    return kept


def rknn(centers, sizes, k, beta):
    m = len(centers)
    out = set()
    for i in range(m):
        dists = []
        for j in range(m):
            if j != i:
                d2 = (centers[i][0] - centers[j][0]) ** 2 + (centers[i][1] - centers[j][1]) ** 2
                dists.append((d2, j))
        dists.sort()
        r2 = beta**2 * (sizes[i][0] ** 2 + sizes[i][1] ** 2)
        for d2, j in dists[:k]:
            if d2 < r2:
                out.add((min(i, j), max(i, j)))
    return sorted(out)


def components(n, edges):
    """Connected components by depth-first search, as a set of frozensets."""
    adj = {i: [] for i in range(n)}
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen, comps = set(), set()
    for s in range(n):
        if s in seen:
            continue
        stack, comp = [s], set()
        while stack:
            v = stack.pop()
            if v in comp:
                continue
            comp.add(v)
            stack.extend(adj[v])
        seen |= comp
        comps.add(frozenset(comp))
    return comps
