"""
Box-aware augmentation policies
===============================

A policy is a list of two-step sub-policies. One is picked per image and each
step fires with its own probability. Geometric steps move the boxes with the
pixels.
"""

import numpy as np

from oidkit import DATA_DIR
from oidkit.augment import AugOp, apply_op, apply_policy, default_policy, derive_seed
from oidkit.io import read_boxes, read_ppm

img = read_ppm(DATA_DIR / "toy_image.ppm")
labels, boxes = read_boxes(DATA_DIR / "toy_boxes.csv")
print(img.shape, labels)

for sp in default_policy().sub_policies:
    print([(op.kind, op.p, op.m) for op in sp])

# Rotation with P=1 always fires; the box grows to enclose the rotated corners
out, moved = apply_op(img, boxes, AugOp("Rotate_BBox", 1.0, 10), np.random.default_rng(0))
for before, after in zip(boxes, moved):
    print(before.as_tuple(), "->", tuple(round(v, 3) for v in after.as_tuple()))

# A seed per image makes runs repeatable regardless of processing order
for image_id in ("a", "b", "c"):
    rng = np.random.default_rng(derive_seed(0, image_id))
    out, moved = apply_policy(img, boxes, default_policy(), rng)
    changed = int((out != img).any(axis=2).sum())
    print(image_id, f"{changed} pixels changed, {len(moved)} boxes kept")
