"""Patch-wise contrastive domain adaptation for semantic segmentation.

A small, numpy-only research codebase: a reverse-mode autodiff engine, a
tiny encoder/decoder segmentation network, spectral appearance translation,
label-space pyramid disparity with cross-domain pair mining, contrastive
and entropy regularized training in two phases, and a synthetic two-domain
benchmark to measure adaptation quality.
"""

__version__ = "0.1.0"
