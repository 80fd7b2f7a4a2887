"""Box IoU, center lines and dividing a curved word into character boxes.

Run: python3 demos/01_geometry.py
"""

import numpy as np

from cenet.geometry import BoxAA, center_line, divide_along_centerline, iou, polygon_iou

a = BoxAA(0, 0, 10, 10)
b = BoxAA(5, 0, 15, 10)
print(f"IoU of two half-overlapping squares: {iou(a, b):.4f}")  # 1/3

# A word polygon: top chain left to right, then bottom chain right to left.
word = np.array([[0, 0], [20, 4], [40, 0], [40, 10], [20, 14], [0, 10]], dtype=float)
print("center line:\n", center_line(word))

# Cutting it into four equal pieces along that line gives one coarse box per character.
for k, box in enumerate(divide_along_centerline(word, 4)):
    print(f"char {k}: {np.round(box.as_array(), 2)}")

# General polygons are compared by rasterization.
tri = np.array([[0, 0], [20, 0], [0, 20]], dtype=float)
print(f"triangle vs its bounding square: {polygon_iou(tri, np.array([[0, 0], [20, 0], [20, 20], [0, 20]], float)):.3f}")
