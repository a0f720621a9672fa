"""Training losses: masked cross-entropy, Charbonnier-penalized entropy,
pseudo-labels, and the phase-dependent total objective.

All loss constructors return autodiff nodes so they can be differentiated
as part of a training graph; `pseudo_labels` works on plain arrays since
label generation happens outside the graph.  Reductions are means (over
pixels, and over mined pairs elsewhere), which keeps the lambda weights
independent of image resolution.

Probabilities are logged as log(p + 1e-12); the epsilon guards exact zeros
coming out of softmax underflow and makes 0*log(0) contribute nothing to
the entropy.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autodiff as ad
from .disparity import VOID

LOG_EPS = 1e-12
CHARBONNIER_EPS_SQ = 0.001 ** 2

BASE = "BASE"
FULL = "FULL"

# Counts of tolerated-but-suspicious inputs, e.g. all-void label maps.
_warnings = {"all_void_label_map": 0}


def warning_counts():
    return dict(_warnings)


def reset_warnings():
    for k in _warnings:
        _warnings[k] = 0


@dataclasses.dataclass(frozen=True)
class LossWeights:
    lambda_ent: float = 0.005
    lambda_self: float = 1.0
    lambda_cont_gt: float = 1e-3
    lambda_cont_pseudo: float = 1e-4
    eta: float = 2.0  # Charbonnier exponent

    def __post_init__(self):
        fields = dataclasses.asdict(self)
        bad = [k for k, v in fields.items() if v < 0]
        if bad:
            raise ValueError(f"loss weights must be nonnegative: {bad}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")


def cross_entropy(pred, labels, n_classes):
    """Mean -log p(true class) over non-void pixels of one image.

    `pred` is a [N_c,H,W] node of per-pixel distributions; `labels` an
    [H,W] integer array with 255 marking void.  An all-void map yields a
    constant 0 and bumps a warning counter rather than failing.
    """
    lab = np.asarray(labels)
    mask = lab != VOID
    if not mask.any():
        _warnings["all_void_label_map"] += 1
        return ad.const(0.0)
    if lab[mask].max() >= n_classes:
        raise ValueError(f"label {lab[mask].max()} out of range for {n_classes} classes")
    pix = np.flatnonzero(mask.ravel())
    cls = lab.ravel()[pix]
    flat = ad.reshape(pred, (n_classes, lab.size))
    picked = ad.take_pairs(flat, rows=cls, cols=pix)
    return ad.scale(ad.reduce_mean(ad.log(ad.add_scalar(picked, LOG_EPS))), -1.0)


def entropy_reg(pred, eta):
    """Mean Charbonnier-penalized per-pixel prediction entropy.

    rho(x) = (x^2 + 0.001^2)^eta applied to H(p) = -sum_c p_c log p_c.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    plogp = ad.mul(pred, ad.log(ad.add_scalar(pred, LOG_EPS)))
    ent = ad.scale(ad.reduce_sum(plogp, axis=0), -1.0)
    rho = ad.power(ad.add_scalar(ad.power(ent, 2.0), CHARBONNIER_EPS_SQ), eta)
    return ad.reduce_mean(rho)


def pseudo_labels(probs):
    """Per-pixel argmax labels from a [N_c,H,W] prediction array.

    Ties go to the lowest class index; no confidence filtering.
    """
    p = np.asarray(probs)
    if p.ndim != 3:
        raise ValueError("expected [N_c,H,W] probabilities")
    return p.argmax(axis=0).astype(np.uint8)


def total_loss(components, weights, phase):
    """Weighted sum of loss components for the given phase.

    BASE: sup_s + sup_l + lambda_ent * ent
    FULL: BASE + lambda_self * self + lambda_cont_gt * cont_gt
                + lambda_cont_pseudo * cont_pseudo

    `components` maps names to nodes or floats; sup_l and the contrastive
    terms may be absent (no labeled targets / no mined pairs) and then
    contribute nothing.  sup_s is always required; ent and self are
    required whenever their weight is nonzero.
    """
    if phase not in (BASE, FULL):
        raise ValueError(f"unknown phase {phase!r}")

    def require(key):
        if key not in components:
            raise ValueError(f"missing required loss component {key!r}")
        return components[key]

    total = require("sup_s")
    if "sup_l" in components:
        total = total + components["sup_l"]
    if weights.lambda_ent != 0.0 or "ent" in components:
        total = total + weights.lambda_ent * require("ent")
    if phase == FULL:
        if weights.lambda_self != 0.0 or "self" in components:
            total = total + weights.lambda_self * require("self")
        if "cont_gt" in components:
            total = total + weights.lambda_cont_gt * components["cont_gt"]
        if "cont_pseudo" in components:
            total = total + weights.lambda_cont_pseudo * components["cont_pseudo"]
    return total
