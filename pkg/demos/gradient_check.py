"""Verify the autodiff engine against central finite differences.

Builds the actual training losses on a random miniature batch and reports
the worst relative gradient error per graph.
"""

import numpy as np

from patchcontrast import autodiff as ad
from patchcontrast import losses, network, pairing

rng = np.random.default_rng(0)

# Softmax cross-entropy with a void-sprinkled label map.
logits = ad.leaf("logits")
pred = ad.softmax(logits, axis=0)
labels = rng.integers(0, 5, size=(8, 8)).astype(np.uint8)
labels[0, :3] = 255
g = ad.Graph(losses.cross_entropy(pred, labels, 5))
err = ad.grad_check(g, {"logits": rng.normal(size=(5, 8, 8))})
print(f"cross-entropy grad check: max rel err {err:.2e}")

# Charbonnier entropy penalty.
g = ad.Graph(losses.entropy_reg(ad.softmax(ad.leaf("logits"), axis=0), eta=2.0))
err = ad.grad_check(g, {"logits": rng.normal(size=(5, 8, 8))})
print(f"entropy penalty grad check: max rel err {err:.2e}")

# Batched contrastive loss.
q = ad.leaf("q")
kk = ad.leaf("k")
loss = pairing.contrastive_loss_batch(q, kk, [0, 2], [[1, 3], [0, 3]], tau=0.07)
err = ad.grad_check(ad.Graph(loss), {"q": rng.normal(size=(2, 6)), "k": rng.normal(size=(4, 6))})
print(f"contrastive loss grad check: max rel err {err:.2e}")

# Whole segmentation network end to end.
cfg = network.ModelConfig(img_h=16, img_w=16, channels=(4, 6, 8), patch_h=8, patch_w=8)
leaves = network.param_leaves(cfg)
probs, _ = network.forward(cfg, ad.const(rng.uniform(size=(3, 16, 16))), leaves)
g = ad.Graph(losses.cross_entropy(probs, rng.integers(0, 5, (16, 16)).astype(np.uint8), 5))
err = ad.grad_check(g, network.init_params(cfg, 1), max_coords_per_leaf=4)
print(f"full network grad check: max rel err {err:.2e}")
