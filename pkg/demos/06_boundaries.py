"""Output shapes for a group of characters: axis-aligned rectangle,
minimum-area quadrilateral, or a polygon that bends with curved text."""

import numpy as np

from cenet.boundary import format_boundary
from cenet.geometry import polygon_area

ang = np.linspace(np.pi * 1.15, np.pi * 1.85, 9)
centers = np.column_stack([60 + 40 * np.cos(ang), 70 + 40 * np.sin(ang)])
boxes = np.column_stack([centers - 4, centers + 4])

for mode in ("rect", "quad", "poly"):
    poly = format_boundary(boxes, mode)
    print(f"{mode:5s}: {len(poly):2d} vertices, area {polygon_area(poly):7.1f}")
