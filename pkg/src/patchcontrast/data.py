"""Synthetic two-domain benchmark: scenes of flat shapes in two styles.

A scene is a 128x64 canvas with a background and 2-6 overlapping shapes
(disk, rectangle, triangle, stripe), rasterized together with exact class
labels.  The five classes are:

    0 background, 1 disk, 2 rectangle, 3 triangle, 4 stripe

Geometry is drawn from the scene seed alone, appearance from the pair
(seed, style id), so the same seed under the source and target styles
yields identical labels with different images.  The source style uses
palette A with mild noise; the target style uses a shifted palette, more
noise, a smooth illumination ramp, and a different texture frequency, which
makes a source-only model measurably worse on target imagery.

The module also hosts the dataset directory format (8-bit PNGs), the
labeled/unlabeled target split (with sequestered labels for evaluation
only), and block-wise partial annotation.
"""

from __future__ import annotations

import dataclasses
import math
import os

import numpy as np
from PIL import Image

from .disparity import VOID

N_CLASSES = 5
CLASS_NAMES = ("background", "disk", "rectangle", "triangle", "stripe")
IMG_H, IMG_W = 64, 128

SOURCE = "SOURCE"
TARGET = "TARGET"

BLOCK = 10  # partial-annotation block side, anchored top-left

# Display palette for label visualizations (not the rendering palettes).
LABEL_COLORS = np.array(
    [
        (40, 40, 40),
        (220, 70, 60),
        (60, 140, 220),
        (230, 200, 60),
        (80, 190, 90),
        *([(0, 0, 0)] * 250),
        (255, 255, 255),  # VOID drawn white
    ],
    dtype=np.uint8,
)


@dataclasses.dataclass(frozen=True)
class StyleConfig:
    domain: str
    style_id: int
    palette: tuple  # 5 base RGB colors in [0,1]
    noise_sigma: float
    illumination: float  # amplitude of the additive ramp
    texture_freq: float
    texture_amp: float
    # class-correlated oriented texture on object pixels; frequencies well
    # above the spectral-translation window so it survives translation and
    # keeps the domains apart even after style transfer
    class_texture_amp: float = 0.0
    class_texture_freq: float = 0.0


def default_styles():
    palette_a = (
        (0.12, 0.12, 0.16),
        (0.85, 0.25, 0.20),
        (0.20, 0.55, 0.85),
        (0.90, 0.80, 0.25),
        (0.30, 0.75, 0.35),
    )
    # the stripe class fades toward the background color on the target
    # side while staying vivid on the source side; translation preserves
    # within-image contrast, so a translated-source model largely misses
    # target stripes until target-side cues (the oriented class texture,
    # the few labels, cross-domain patch pairs) separate them again
    palette_b = (
        (0.30, 0.24, 0.18),
        (0.52, 0.38, 0.30),
        (0.30, 0.42, 0.55),
        (0.68, 0.58, 0.22),
        (0.33, 0.30, 0.24),
    )
    source = StyleConfig(
        domain=SOURCE, style_id=0, palette=palette_a,
        noise_sigma=0.015, illumination=0.0, texture_freq=2.0, texture_amp=0.03,
    )
    target = StyleConfig(
        domain=TARGET, style_id=1, palette=palette_b,
        noise_sigma=0.05, illumination=0.22, texture_freq=5.0, texture_amp=0.06,
        class_texture_amp=0.12, class_texture_freq=14.0,
    )
    return source, target


@dataclasses.dataclass(frozen=True)
class Scene:
    image: np.ndarray  # [3,H,W] float64 in [0,1]
    labels: np.ndarray  # [H,W] uint8, values < N_CLASSES
    domain: str
    scene_id: str

    def __post_init__(self):
        self.image.setflags(write=False)
        self.labels.setflags(write=False)


@dataclasses.dataclass(frozen=True)
class UnlabeledScene:
    """A target scene as the trainer sees it: no label accessor at all."""

    image: np.ndarray
    domain: str
    scene_id: str

    def __post_init__(self):
        self.image.setflags(write=False)


@dataclasses.dataclass(frozen=True)
class SsdaSplit:
    source: tuple  # labeled source Scenes
    labeled_target: tuple  # N_l target Scenes
    unlabeled_target: tuple  # UnlabeledScenes
    hidden_labels: dict  # scene_id -> labels, for evaluation only


# ---------------------------------------------------------------------------
# Rasterization


def _shape_masks(rng, xx, yy):
    """One randomly parameterized shape mask per call, with its class id."""
    h, w = xx.shape
    kind = int(rng.integers(1, N_CLASSES))
    if kind == 1:  # disk
        cx = rng.uniform(10, w - 10)
        cy = rng.uniform(8, h - 8)
        r = rng.uniform(6, 15)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    elif kind == 2:  # rectangle
        rw = rng.uniform(12, 36)
        rh = rng.uniform(8, 22)
        x0 = rng.uniform(0, w - rw)
        y0 = rng.uniform(0, h - rh)
        mask = (xx >= x0) & (xx < x0 + rw) & (yy >= y0) & (yy < y0 + rh)
    elif kind == 3:  # triangle, via half-plane sign tests
        cx = rng.uniform(16, w - 16)
        cy = rng.uniform(12, h - 12)
        pts = np.stack(
            [
                cx + rng.uniform(-32, 32, size=3),
                cy + rng.uniform(-22, 22, size=3),
            ],
            axis=1,
        )
        def edge(p, q):
            return (q[0] - p[0]) * (yy - p[1]) - (q[1] - p[1]) * (xx - p[0])
        e1 = edge(pts[0], pts[1])
        e2 = edge(pts[1], pts[2])
        e3 = edge(pts[2], pts[0])
        mask = ((e1 >= 0) & (e2 >= 0) & (e3 >= 0)) | ((e1 <= 0) & (e2 <= 0) & (e3 <= 0))
    else:  # stripe: a band at a random angle crossing the canvas
        theta = rng.uniform(0, np.pi)
        nx, ny = math.cos(theta), math.sin(theta)
        offset = rng.uniform(0.25, 0.75)
        c = nx * w * offset + ny * h * offset
        thickness = rng.uniform(3, 7)
        mask = np.abs(nx * xx + ny * yy - c) <= thickness
    return kind, mask


def generate_scene(seed, style):
    """Render one scene; geometry depends on the seed alone, appearance on
    (seed, style.style_id)."""
    geom = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:IMG_H, 0:IMG_W].astype(np.float64)
    labels = np.zeros((IMG_H, IMG_W), dtype=np.uint8)
    n_shapes = int(geom.integers(2, 7))
    for _ in range(n_shapes):
        kind, mask = _shape_masks(geom, xx, yy)
        labels[mask] = kind

    app = np.random.default_rng([int(seed), style.style_id])
    palette = np.asarray(style.palette, dtype=np.float64)
    palette = np.clip(palette + app.normal(0.0, 0.02, size=palette.shape), 0.0, 1.0)
    img = palette[labels].transpose(2, 0, 1).copy()  # [3,H,W]

    fx = style.texture_freq
    phase_x, phase_y = app.uniform(0, 2 * np.pi, size=2)
    texture = np.sin(2 * np.pi * fx * xx / IMG_W + phase_x) * np.sin(
        2 * np.pi * fx * yy / IMG_H + phase_y
    )
    img += style.texture_amp * texture

    if style.class_texture_amp:
        f = style.class_texture_freq
        for c in range(1, N_CLASSES):
            theta = 2.0 * np.pi * c / N_CLASSES
            phase = app.uniform(0, 2 * np.pi)
            sel = labels == c
            if not sel.any():
                continue
            wave = np.sin(
                2 * np.pi * f * (np.cos(theta) * xx + np.sin(theta) * yy) / IMG_W
                + phase
            )
            img[:, sel] += style.class_texture_amp * wave[sel]

    if style.illumination:
        theta = app.uniform(0, 2 * np.pi)
        ramp = (np.cos(theta) * xx / IMG_W + np.sin(theta) * yy / IMG_H)
        img += style.illumination * (ramp - ramp.mean())

    img += app.normal(0.0, style.noise_sigma, size=img.shape)
    prefix = "src" if style.domain == SOURCE else "tgt"
    return Scene(
        image=np.clip(img, 0.0, 1.0),
        labels=labels,
        domain=style.domain,
        scene_id=f"{prefix}_{int(seed):08d}",
    )


def make_benchmark(n_source, n_target, n_val, seed):
    """Source pool, target training pool, and held-out labeled target
    validation scenes, with disjoint per-role seed ranges."""
    src_style, tgt_style = default_styles()
    base = int(seed) * 4_000_000
    source = [generate_scene(base + i, src_style) for i in range(n_source)]
    target = [generate_scene(base + 1_000_000 + i, tgt_style) for i in range(n_target)]
    val = [generate_scene(base + 2_000_000 + i, tgt_style) for i in range(n_val)]
    return source, target, val


# ---------------------------------------------------------------------------
# Partial annotation


def partial_annotation(labels, fraction, seed):
    """Void out all but a seeded selection of ceil(fraction * blocks) 10x10
    blocks; kept pixels are untouched."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    lab = np.asarray(labels)
    h, w = lab.shape
    nbr = math.ceil(h / BLOCK)
    nbc = math.ceil(w / BLOCK)
    n_blocks = nbr * nbc
    n_keep = math.ceil(fraction * n_blocks)
    keep = np.random.default_rng(seed).choice(n_blocks, size=n_keep, replace=False)
    out = np.full_like(lab, VOID)
    for b in keep:
        r, c = divmod(int(b), nbc)
        sl = (slice(r * BLOCK, min((r + 1) * BLOCK, h)),
              slice(c * BLOCK, min((c + 1) * BLOCK, w)))
        out[sl] = lab[sl]
    return out


# ---------------------------------------------------------------------------
# SSDA split


def split_ssda(target_scenes, n_labeled, seed):
    """Pick N_l labeled target scenes; sequester the labels of the rest.

    Returns (labeled, unlabeled, hidden_labels).  The unlabeled entries are
    UnlabeledScene values that carry no label data.
    """
    scenes = list(target_scenes)
    if n_labeled < 0 or n_labeled > len(scenes):
        raise ValueError(f"n_labeled={n_labeled} out of range for {len(scenes)} scenes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(scenes))
    labeled = tuple(scenes[i] for i in sorted(order[:n_labeled]))
    rest = [scenes[i] for i in sorted(order[n_labeled:])]
    unlabeled = tuple(
        UnlabeledScene(image=s.image, domain=s.domain, scene_id=s.scene_id) for s in rest
    )
    hidden = {s.scene_id: s.labels for s in rest}
    return labeled, unlabeled, hidden


# ---------------------------------------------------------------------------
# Dataset directory I/O (8-bit PNGs: images/<id>.png + labels/<id>.png)


def image_to_u8(image):
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_dataset(scenes, out_dir):
    img_dir = os.path.join(out_dir, "images")
    lab_dir = os.path.join(out_dir, "labels")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(lab_dir, exist_ok=True)
    for s in scenes:
        rgb = image_to_u8(s.image).transpose(1, 2, 0)
        Image.fromarray(rgb, mode="RGB").save(os.path.join(img_dir, s.scene_id + ".png"))
        Image.fromarray(np.asarray(s.labels, dtype=np.uint8), mode="L").save(
            os.path.join(lab_dir, s.scene_id + ".png")
        )
    return img_dir, lab_dir


def load_dataset(image_dir, label_dir, domain):
    """Scenes from paired PNG directories, in lexicographic stem order."""
    def stems(d):
        if not os.path.isdir(d):
            raise FileNotFoundError(f"no such directory: {d}")
        return {os.path.splitext(f)[0] for f in os.listdir(d) if f.endswith(".png")}

    img_stems = stems(image_dir)
    lab_stems = stems(label_dir)
    if img_stems != lab_stems:
        odd = sorted(img_stems ^ lab_stems)
        raise ValueError(f"unpaired dataset entries: {odd[:5]}")
    scenes = []
    for stem in sorted(img_stems):
        ipath = os.path.join(image_dir, stem + ".png")
        lpath = os.path.join(label_dir, stem + ".png")
        rgb = np.asarray(Image.open(ipath).convert("RGB"), dtype=np.float64) / 255.0
        lab = np.asarray(Image.open(lpath), dtype=np.uint8)
        if lab.shape != rgb.shape[:2]:
            raise ValueError(
                f"{stem}: label size {lab.shape} does not match image {rgb.shape[:2]}"
            )
        bad = (lab >= N_CLASSES) & (lab != VOID)
        if bad.any():
            y, x = np.argwhere(bad)[0]
            raise ValueError(
                f"{lpath}: label value {lab[y, x]} at pixel ({y},{x}) "
                f"exceeds {N_CLASSES - 1} and is not void"
            )
        scenes.append(
            Scene(
                image=rgb.transpose(2, 0, 1).copy(),
                labels=lab.copy(),
                domain=domain,
                scene_id=stem,
            )
        )
    return scenes


def labels_to_color(labels):
    """Color visualization of a label map (void drawn white)."""
    return LABEL_COLORS[np.asarray(labels)]
