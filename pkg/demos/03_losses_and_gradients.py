"""Training losses and their finite-difference checks.

The classification loss is a hinge on the raw score with hard negative
mining, regression uses -ln IoU, and the embedding loss is a contrastive
loss with margin 1 over a rebalanced sample of local pairs.
"""

import numpy as np

from cenet.gradcheck import run_all
from cenet.losses import contrastive, sample_pairs

for label, d in [(1, 0.0), (0, 0.4), (0, 1.5), (1, 0.5)]:
    v = contrastive(np.zeros(2), np.array([d, 0.0]), label).value
    print(f"contrastive(label={label}, D={d}) = {v:.4f}")

# 1000 same-word pairs and 150 cross-word pairs: reweighting lifts negatives to 60%.
labels = np.array([1] * 1000 + [0] * 150)
sp = sample_pairs(labels, 200, 0.6, np.random.default_rng(0))
print(f"negatives in sample: {(labels[sp.indices] == 0).mean():.2f}")

for r in run_all([0, 1], names=["cls_ohem", "iou_reg", "emb_loss", "total"]):
    print(f"{r.name:10s} seed {r.seed}: max rel err {r.max_rel_error:.1e} over {r.n_checked} coords")
