"""Mine cross-domain patch pairs from label disparities.

Low-disparity patches become positives, high-disparity ones negatives;
each line below is one query with its mined partners.
"""

import numpy as np

from patchcontrast import data, disparity, pairing

grid = disparity.PatchGrid(64, 128, 16, 32)
target = data.generate_scene(1000, data.default_styles()[1])
source = data.generate_scene(3, data.default_styles()[0])

dt = disparity.image_descriptors(target.labels, grid, data.N_CLASSES)
ds = disparity.image_descriptors(source.labels, grid, data.N_CLASSES)
D = disparity.disparity_matrix(dt, ds)

alpha, beta, k = 3.0, 25.0, 4
mined = pairing.mine_pairs(D, alpha, beta, k, seed=0)
print(f"alpha={alpha}, beta={beta}, k={k}: mined {len(mined)} pairs "
      f"from {grid.n_patches} query patches")

sets = pairing.to_pair_sets(mined, target.scene_id, source.scene_id, pairing.GROUND_TRUTH)
for ps in sets:
    print(" ", pairing.format_pair_line(ps))

if mined:
    m = mined[0]
    print("\nfirst pair sanity: D(query,pos) =", round(m.disparity, 3),
          "| D(query,negs) =", [round(float(D[m.query, n]), 1) for n in m.negatives])
