"""
Affine warps and perturbation sweeps
====================================

One bilinear warp does all the geometry: input augmentation, feature-level
augmentation and the evaluation sweeps.
"""

import numpy as np

from flabench.evaluation import flip_rate, make_grid, perturb
from flabench.warp import AffineParams, make_matrix, warp

# a small image with one bright square
x = np.zeros((1, 1, 12, 12), np.float32)
x[0, 0, 4:8, 4:8] = 1.0

# integer shifts move pixels exactly, zeros come in at the border
m = make_matrix(AffineParams(dx=3, dy=-2), 12, 12)
print("shifted by (3, -2):")
print(warp(x, m)[0, 0].astype(int))

# rotations and rescales resample bilinearly about the image centre
r = warp(x, make_matrix(AffineParams(angle=30, scale=0.8), 12, 12))[0, 0]
print("mass after 30 deg / x0.8:", round(float(r.sum()), 3), "(was 16)")

# the sweep grids used by the stability metrics
for op in ("rotate", "translate_x", "scale"):
    g = make_grid(op)
    print(f"{op:12s} {len(g.values)} values from {g.values[0]:g} to {g.values[-1]:g}")

# flip rate of one label sequence: changes between neighbours / (len - 1)
print("flip rate of [0, 0, 1, 1, 0]:", flip_rate([0, 0, 1, 1, 0]))

# a toy "classifier" that reads the column of the brightest pixel: translating
# the image sweeps that column across bucket boundaries
labels = [int(np.argmax(perturb(x, "translate_x", v)[0, 0].max(axis=0)) // 4)
          for v in make_grid("translate_x").values]
print("labels along translate_x:", labels)
print("flip rate:", round(flip_rate(labels), 3))
