"""Linking characters into words.

Local pairs come from a radius-limited k-nearest-neighbour search. Pairs
whose embedding distance exceeds d are cut; the connected components that
remain are words, and lone characters are dropped.
"""

import numpy as np

from cenet.clustering import cut_and_group, embedding_distances, filter_short
from cenet.pairing import rknn_pairs

centers = np.array([[10, 10], [20, 10], [30, 10], [44, 10], [54, 10], [90, 40]], dtype=float)
sizes = np.full((6, 2), 8.0)
emb = np.array([[0, 0], [0.1, 0], [0.05, 0.1], [2, 0], [2.1, 0], [0, 3]], dtype=float)

pairs = rknn_pairs(centers, sizes, k=2, beta=2.0)
dist = embedding_distances(emb, pairs)
for (i, j), dd in zip(pairs, dist):
    print(f"pair {i}-{j}: embedding distance {dd:.2f}")

for d in (0.2, 1.0, 3.0):
    groups = cut_and_group(len(centers), pairs, dist, d)
    print(f"d={d}: {[g.members for g in groups]} -> kept {[g.members for g in filter_short(groups, 2)]}")
