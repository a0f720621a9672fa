"""Label-space pyramid disparity between patches of two scenes.

Shows the anchor values (identical patches score 0, disjoint single-class
patches score the 96 maximum) and then a real cross-scene matrix.
"""

import numpy as np

from patchcontrast import data, disparity

# Anchors on hand-built 16x32 patches.
a = np.zeros((16, 32), dtype=np.uint8)
b = np.ones((16, 32), dtype=np.uint8)
half = np.zeros((16, 32), dtype=np.uint8)
half[:, 16:] = 1

print("identical patches:   D =", disparity.patch_disparity(a, a, 5))
print("disjoint classes:    D =", disparity.patch_disparity(a, b, 5))
print("half-split vs solid: D =", disparity.patch_disparity(a, half, 5))
print("bounds: 0 <= D <=", disparity.MAX_DISPARITY)

# Cross-scene matrix on generated label maps.
s1 = data.generate_scene(3, data.default_styles()[0])
s2 = data.generate_scene(1003, data.default_styles()[1])
grid = disparity.PatchGrid(64, 128, 16, 32)
d1 = disparity.image_descriptors(s1.labels, grid, data.N_CLASSES)
d2 = disparity.image_descriptors(s2.labels, grid, data.N_CLASSES)
D = disparity.disparity_matrix(d1, d2)

print(f"\n{grid.n_patches}x{grid.n_patches} cross-scene disparity (rows: scene A patches):")
for row in D:
    print(" ".join(f"{v:5.1f}" for v in row))
print(f"\nmin {D.min():.2f}, median {np.median(D):.2f}, max {D.max():.2f}")
