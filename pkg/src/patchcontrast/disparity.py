"""Label-space disparity between image patches via spatial pyramid histograms.

A patch's annotation content is summarized by class histograms computed at
three pyramid levels (the whole patch, a 2x2 split, a 4x4 split).  The
disparity between two patches is the weighted sum of squared L2 distances
between corresponding cell histograms, with coarser levels weighted by the
number of finest-level cells they cover (16, 4, 1).  Scores live in
[0, 96]: 0 for identical annotations, 96 for patches annotated with two
disjoint single classes.

Unlabeled (void) pixels are excluded from every histogram, which is then
renormalized over the remaining pixels; a cell that is entirely void
contributes a zero vector.
"""

from __future__ import annotations

import numpy as np

VOID = 255

N_LEVELS = 3
# Cells per side at each level, coarse to fine: 1, 2, 4.
_CELLS_PER_SIDE = [2 ** m for m in range(N_LEVELS)]
N_CELLS = sum(s * s for s in _CELLS_PER_SIDE)  # 21

# Level m cells are weighted by the finest-level cell count they cover.
LEVEL_WEIGHTS = [4 ** (N_LEVELS - 1 - m) for m in range(N_LEVELS)]  # 16, 4, 1
CELL_WEIGHTS = np.concatenate(
    [np.full(s * s, w, dtype=np.float64) for s, w in zip(_CELLS_PER_SIDE, LEVEL_WEIGHTS)]
)

# sum over levels of weight * n_cells * max_cell_distance(=2)
MAX_DISPARITY = float(sum(w * s * s * 2 for s, w in zip(_CELLS_PER_SIDE, LEVEL_WEIGHTS)))


class PatchGrid:
    """Partition of an image plane into a regular grid of patches.

    Patches are indexed row-major.  Patch sides must divide the image sides
    and be multiples of 4 so the finest pyramid level has whole-pixel cells.
    """

    def __init__(self, img_h, img_w, patch_h, patch_w):
        if img_h % patch_h or img_w % patch_w:
            raise ValueError(
                f"patch {patch_w}x{patch_h} does not tile image {img_w}x{img_h}"
            )
        side = _CELLS_PER_SIDE[-1]
        if patch_h % side or patch_w % side:
            raise ValueError(f"patch sides must be multiples of {side}")
        self.img_h = img_h
        self.img_w = img_w
        self.patch_h = patch_h
        self.patch_w = patch_w
        self.n_rows = img_h // patch_h
        self.n_cols = img_w // patch_w
        self.n_patches = self.n_rows * self.n_cols

    def patch_slice(self, index):
        """Row/column slices selecting patch `index` from an [H,W,...] array."""
        if not 0 <= index < self.n_patches:
            raise IndexError(f"patch index {index} out of range")
        r, c = divmod(index, self.n_cols)
        return (
            slice(r * self.patch_h, (r + 1) * self.patch_h),
            slice(c * self.patch_w, (c + 1) * self.patch_w),
        )

    def extract(self, array, index):
        sr, sc = self.patch_slice(index)
        return array[sr, sc]

    def __repr__(self):
        return (
            f"PatchGrid({self.n_rows}x{self.n_cols} patches of "
            f"{self.patch_w}x{self.patch_h} px)"
        )


def _normalize_counts(counts):
    totals = counts.sum(axis=-1, keepdims=True)
    out = np.zeros_like(counts)
    np.divide(counts, totals, out=out, where=totals > 0)
    return out


def pyramid_descriptor(label_patch, n_classes):
    """Pyramid histogram descriptor [N_CELLS, n_classes] of one label patch."""
    patch = np.asarray(label_patch)
    if patch.ndim != 2:
        raise ValueError("label patch must be 2-D")
    h, w = patch.shape
    side = _CELLS_PER_SIDE[-1]
    if h % side or w % side:
        raise ValueError(f"patch sides must be multiples of {side}")
    onehot = (patch[..., None] == np.arange(n_classes)).astype(np.float64)
    rows = []
    for s in _CELLS_PER_SIDE:
        cells = onehot.reshape(s, h // s, s, w // s, n_classes).sum(axis=(1, 3))
        rows.append(_normalize_counts(cells).reshape(s * s, n_classes))
    return np.concatenate(rows, axis=0)


def image_descriptors(label_map, grid, n_classes):
    """Pyramid descriptors for every patch of a label map.

    Returns [n_patches, N_CELLS, n_classes]; patch order is row-major, cell
    order is coarse-to-fine with row-major cells inside each level.
    """
    labels = np.asarray(label_map)
    if labels.shape != (grid.img_h, grid.img_w):
        raise ValueError(f"label map shape {labels.shape} does not match grid")
    onehot = (labels[..., None] == np.arange(n_classes)).astype(np.float64)
    nr, nc = grid.n_rows, grid.n_cols
    ph, pw = grid.patch_h, grid.patch_w
    parts = []
    for s in _CELLS_PER_SIDE:
        counts = onehot.reshape(nr, s, ph // s, nc, s, pw // s, n_classes).sum(axis=(2, 5))
        # [nr, s, nc, s, C] -> [patch, cell, C]
        counts = counts.transpose(0, 2, 1, 3, 4).reshape(nr * nc, s * s, n_classes)
        parts.append(_normalize_counts(counts))
    return np.concatenate(parts, axis=1)


def disparity_matrix(desc_a, desc_b):
    """All-pairs disparity between two descriptor sets.

    desc_a [P, N_CELLS, C] x desc_b [Q, N_CELLS, C] -> [P, Q] with
    D[i, j] = sum_cells weight_cell * ||desc_a[i, cell] - desc_b[j, cell]||^2.
    """
    a = np.asarray(desc_a, dtype=np.float64)
    b = np.asarray(desc_b, dtype=np.float64)
    if a.ndim != 3 or b.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ValueError("descriptor sets must share [*, N_CELLS, C] layout")
    if a.shape[1] != N_CELLS:
        raise ValueError(f"expected {N_CELLS} pyramid cells, got {a.shape[1]}")
    w = CELL_WEIGHTS[None, :, None]
    aw = a * w
    na = (aw * a).sum(axis=(1, 2))
    nb = (b * w * b).sum(axis=(1, 2))
    cross = aw.reshape(a.shape[0], -1) @ b.reshape(b.shape[0], -1).T
    d = na[:, None] + nb[None, :] - 2.0 * cross
    # exact cancellation can dip microscopically below zero
    return np.maximum(d, 0.0)


def patch_disparity(label_patch_a, label_patch_b, n_classes):
    """Disparity between two individual label patches."""
    da = pyramid_descriptor(label_patch_a, n_classes)[None]
    db = pyramid_descriptor(label_patch_b, n_classes)[None]
    return float(disparity_matrix(da, db)[0, 0])


def exact_disparity(label_patch_a, label_patch_b):
    """Pixel-exact baseline: differing-pixel fraction scaled to [0, 96].

    This is the brute-force alternative to the pyramid score; the scale
    factor makes the two directly comparable under the same thresholds.
    """
    a = np.asarray(label_patch_a)
    b = np.asarray(label_patch_b)
    if a.shape != b.shape:
        raise ValueError("patches must have equal shapes")
    return float((a != b).mean() * MAX_DISPARITY)


def exact_disparity_matrix(label_map_a, label_map_b, grid):
    """All-pairs pixel-exact disparity between the patches of two images."""
    out = np.empty((grid.n_patches, grid.n_patches))
    for i in range(grid.n_patches):
        pa = grid.extract(np.asarray(label_map_a), i)
        for j in range(grid.n_patches):
            out[i, j] = exact_disparity(pa, grid.extract(np.asarray(label_map_b), j))
    return out
