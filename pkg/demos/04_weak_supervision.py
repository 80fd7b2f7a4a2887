"""Turning word-level annotations into character targets.

Without predictions the word is cut into equal pieces. Predictions that
overlap a piece well enough replace its width (or height, for vertical
words) and position, which fixes unevenly spaced characters.
"""

import numpy as np

from cenet.geometry import BoxAA, iou
from cenet.synthdata import SceneSpec, generate_scene
from cenet.weaksup import fine_chars_for

spec = SceneSpec(n_words=(1, 1), layouts=("straight",), char_width=(4.0, 14.0), char_height=(12.0, 12.0),
                 rotation=(0.0, 0.0), margin=0.0)
scene = generate_scene(spec, 3)
word = scene.words[0]
truth = scene.char_boxes

coarse, _ = fine_chars_for(word, np.zeros((0, 4)), np.zeros(0))
_, fine = fine_chars_for(word, truth, np.ones(len(truth)))
for k, (c, f, t) in enumerate(zip(coarse, fine, truth)):
    print(f"char {k}: IoU coarse {iou(c, BoxAA(*t)):.2f} -> fine {iou(f.box, BoxAA(*t)):.2f} ({f.source.name.lower()})")
