"""Segmentation quality: confusion matrix, per-class IoU, mean IoU.

Rows of the matrix are ground truth, columns are predictions; void pixels
never score.  Classes with no ground-truth pixels are excluded from the
mean (their IoU reports as NaN), so a scene that happens to miss a shape
class does not drag the average.
"""

from __future__ import annotations

import csv
import warnings

import numpy as np

from . import losses
from . import network
from .disparity import VOID


class ConfusionMatrix:
    def __init__(self, n_classes):
        self.n_classes = n_classes
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)

    def accumulate(self, pred, gt):
        """Count pred-vs-gt pairs over non-void ground-truth pixels."""
        p = np.asarray(pred)
        g = np.asarray(gt)
        if p.shape != g.shape:
            raise ValueError(f"shape mismatch: pred {p.shape} vs gt {g.shape}")
        mask = g != VOID
        p = p[mask].astype(np.int64)
        g = g[mask].astype(np.int64)
        if p.size and (p.min() < 0 or p.max() >= self.n_classes):
            raise ValueError("prediction label out of range")
        if g.size and g.max() >= self.n_classes:
            raise ValueError("ground-truth label out of range")
        flat = np.bincount(g * self.n_classes + p, minlength=self.n_classes ** 2)
        self.counts += flat.reshape(self.n_classes, self.n_classes)
        return self

    def merge(self, other):
        self.counts += other.counts
        return self

    @property
    def total(self):
        return int(self.counts.sum())


def per_class_iou(cm):
    """IoU per class; NaN for classes with no ground-truth pixels."""
    c = cm.counts.astype(np.float64)
    diag = np.diag(c)
    gt_count = c.sum(axis=1)
    pred_count = c.sum(axis=0)
    denom = gt_count + pred_count - diag
    iou = np.full(cm.n_classes, np.nan)
    present = gt_count > 0
    ok = present & (denom > 0)
    iou[ok] = diag[ok] / denom[ok]
    return iou


def miou(cm):
    """(per-class IoU, mean over classes present in ground truth)."""
    iou = per_class_iou(cm)
    valid = ~np.isnan(iou)
    if not valid.any():
        warnings.warn("confusion matrix has no scored pixels; mIoU undefined")
        return iou, float("nan")
    return iou, float(iou[valid].mean())


def predict_labels(cfg, params, image):
    return losses.pseudo_labels(network.segment(cfg, params, image))


def evaluate_scenes(cfg, params, scenes, gt_lookup=None):
    """mIoU of a model over labeled scenes.

    `scenes` may be Scene values (labels attached) or bare images paired
    with a {scene_id: labels} lookup for sequestered ground truth.
    """
    cm = ConfusionMatrix(cfg.n_classes)
    for s in scenes:
        gt = s.labels if hasattr(s, "labels") else gt_lookup[s.scene_id]
        cm.accumulate(predict_labels(cfg, params, s.image), gt)
    iou, mean = miou(cm)
    return cm, iou, mean


def write_report_csv(path, iou, mean, class_names=None):
    """Per-class IoU rows plus a final mIoU row."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "iou"])
        for c, v in enumerate(iou):
            name = class_names[c] if class_names else str(c)
            w.writerow([name, "" if np.isnan(v) else f"{v:.6f}"])
        w.writerow(["miou", "" if np.isnan(mean) else f"{mean:.6f}"])
