"""Train the small network on synthetic scenes and detect words.

This takes a couple of minutes on one core. The model is tiny, so expect
rough boxes after this few steps; the acceptance suite trains for longer.
"""

import numpy as np

from cenet.config import PipelineConfig
from cenet.eval import match_regions, prf
from cenet.pipeline import Detector
from cenet.synthdata import SceneSpec, generate_scene
from cenet.training import Trainer

spec = SceneSpec()
train = [generate_scene(spec, seed) for seed in range(100)]
test = [generate_scene(spec, 5000 + seed) for seed in range(10)]

cfg = PipelineConfig(steps=300, lr_drop_at=250, seed=0)
trainer = Trainer(cfg)
for row in trainer.fit(train):
    if row["step"] % 50 == 0:
        print(f"step {row['step']:4d}  total {row['total']:.3f}  cls {row['cls']:.3f}  reg {row['reg']:.3f}  emb {row['emb']:.3f}")

det = Detector(trainer.net, cfg)
matchings = []
for scene in test:
    found = det.detect(scene.image, s=0.4, d=0.6)
    matchings.append(match_regions(found.boundaries, [w.boundary for w in scene.words]))
r = prf(matchings)
print(f"precision {r.precision:.2f} recall {r.recall:.2f} F {r.f_measure:.2f} on {len(test)} scenes")
