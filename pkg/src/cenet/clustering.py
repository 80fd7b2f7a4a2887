"""Group characters by cutting long embedding edges and chaining the rest."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class UnionFind:
    """Disjoint sets over ``0..n-1`` with path compression and union by rank."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        return True


@dataclass
class TextGroup:
    members: tuple[int, ...]
    boundary: np.ndarray | None = None

    def to_record(self, group_id: int) -> dict:
        bnd = None if self.boundary is None else np.asarray(self.boundary).tolist()
        return {"group_id": group_id, "member_indices": list(self.members), "boundary": bnd}


def cut_and_group(n: int, pairs: np.ndarray, emb_dist: np.ndarray, d: float) -> list[TextGroup]:
    """Connected components over pairs whose embedding distance is ``<= d``.

    Every candidate lands in exactly one group (singletons included); groups
    are ordered by their smallest member.
    """
    uf = UnionFind(n)
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    emb_dist = np.asarray(emb_dist, dtype=float).reshape(-1)
    for (i, j), dist in zip(pairs, emb_dist):
        if dist <= d:
            uf.union(int(i), int(j))
    comps: dict[int, list[int]] = {}
    for i in range(n):
        comps.setdefault(uf.find(i), []).append(i)
    groups = [TextGroup(tuple(m)) for m in comps.values()]
    groups.sort(key=lambda g: g.members[0])
    return groups


def filter_short(groups: Sequence[TextGroup], min_chars: int = 2, enabled: bool = True) -> list[TextGroup]:
    if not enabled:
        return list(groups)
    return [g for g in groups if len(g.members) >= min_chars]


def embedding_distances(embeddings: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros(0)
    e = np.asarray(embeddings, dtype=float)
    return np.linalg.norm(e[pairs[:, 0]] - e[pairs[:, 1]], axis=1)


def write_groups_json(path, groups: Sequence[TextGroup]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([g.to_record(i) for i, g in enumerate(groups)], fh)
