"""Landmarks to region boxes, projection onto a feature grid, and fixed-size region pooling."""
import numpy as np
import torch

from xdlf.datagen import canonical_landmarks
from xdlf.fslr import extract_boxes, preset_box_sizes, project_boxes, region_pool

lm = canonical_landmarks(224, 224)[None]
print("preset sizes at 224x224:", preset_box_sizes(224, 224))
print("preset sizes at 64x64:  ", preset_box_sizes(64, 64))

boxes = extract_boxes(lm, 224, 224)
grid = project_boxes(boxes, (224, 224), (56, 56))
for name, b, g in zip(("left eye", "right eye", "nose", "mouth"), boxes[0], grid[0]):
    print(f"{name:9s} image {tuple(int(v) for v in b)} -> 56x56 grid {tuple(int(v) for v in g)}")

# A landmark near the border still yields an in-bounds box of the preset size.
edge = lm.copy()
edge[0, 36:42] = [[3.0, 3.0]]
b = extract_boxes(edge, 224, 224)[0, 0]
print("eye pushed to the corner ->", tuple(int(v) for v in b), "size", int(b[1] - b[0]), "x", int(b[3] - b[2]))

feat = torch.arange(56 * 56, dtype=torch.float32).reshape(1, 1, 56, 56)   # [c, d, h, w]
pooled = region_pool(feat, grid, 7, 7)
print("region_pool output:", tuple(pooled.shape), "(regions, channels, frames, 7, 7)")
y0, y1, x0, x1 = grid[0, 3]
print("mouth window max equals the max inside its box:",
      float(pooled[3].max()) == float(feat[0, 0, y0:y1, x0:x1].max()))
