"""From dense prediction maps to character candidates.

Each map cell predicts a confidence, four distances to the box sides and an
embedding vector. Thresholding, non-maximum suppression and bilinear
embedding sampling turn the maps into a short candidate list.
"""

import numpy as np

from cenet.decode import PredictionMaps, decode_candidates, extract_embeddings, nms

h, w, stride = 8, 12, 4
conf = np.zeros((h, w))
offsets = np.full((4, h, w), 2.5)
emb = np.zeros((2, h, w))

# One character seen by a 2x2 block of cells, a second one alone.
conf[3:5, 3:5] = [[0.7, 0.8], [0.75, 0.9]]
conf[4, 9] = 0.6
emb[0, :, 6:] = 1.0

maps = PredictionMaps(conf, offsets, emb, stride)
raw = decode_candidates(maps, s=0.5)
print(f"{len(raw)} cells above s=0.5")
kept = extract_embeddings(maps, nms(raw, 0.5))
for c in kept:
    print(f"score {c.score:.2f} center ({c.cx:.1f}, {c.cy:.1f}) size {c.w:.1f}x{c.h:.1f} emb {np.round(c.embedding, 2)}")
