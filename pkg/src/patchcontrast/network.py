"""Tiny convolutional segmentation network with patch-level latent projectors.

The encoder is a stack of stride-2 3x3 conv+relu stages.  Two decoders hang
off it:

* a segmentation head: 1x1 conv to class logits at the coarsest stage,
  bilinearly upsampled to input resolution and softmax-normalized per pixel;
* per-stage latent projectors: a stage's feature map is average-pooled over
  each patch rectangle and sent through a two-layer perceptron, giving one
  d_z-dimensional vector per image patch.  These exist for training only;
  inference needs just the segmentation path.

Forward passes are expressed as autodiff graphs so the training loop can
differentiate through them; `segment` and `project_latent` are small
evaluation wrappers.  Building both heads in one graph shares the encoder
pass between them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from . import autodiff as ad
from .disparity import PatchGrid

CHECKPOINT_VERSION = 1


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    img_h: int = 64
    img_w: int = 128
    in_channels: int = 3
    n_classes: int = 5
    channels: tuple = (16, 32, 64)
    latent_stages: tuple = (2, 3)  # 1-indexed encoder stages with projectors
    hidden: int = 64
    d_z: int = 32
    patch_h: int = 16
    patch_w: int = 32

    def __post_init__(self):
        if any(c < 1 for c in self.channels) or self.hidden < 1 or self.d_z < 1:
            raise ValueError("channel/projector widths must be positive")
        n = self.n_stages
        if self.img_h % (2 ** n) or self.img_w % (2 ** n):
            raise ValueError(f"image sides must be divisible by {2 ** n}")
        for s in self.latent_stages:
            if not 1 <= s <= n:
                raise ValueError(f"latent stage {s} out of range 1..{n}")
            f = 2 ** s
            if self.patch_h % f or self.patch_w % f:
                raise ValueError(
                    f"patch {self.patch_w}x{self.patch_h} does not cover whole "
                    f"feature cells at stage {s} (stride factor {f})"
                )

    @property
    def n_stages(self):
        return len(self.channels)

    def grid(self):
        return PatchGrid(self.img_h, self.img_w, self.patch_h, self.patch_w)

    def stage_shape(self, stage):
        f = 2 ** stage
        return (self.channels[stage - 1], self.img_h // f, self.img_w // f)


def receptive_radius(stage):
    """Input-pixel radius a stage's feature value can see (3x3, stride-2)."""
    return sum(2 ** i for i in range(stage))  # 1, 3, 7, ...


def param_shapes(cfg):
    """Ordered {name: shape} of all trainable parameters."""
    shapes = {}
    cin = cfg.in_channels
    for i, cout in enumerate(cfg.channels, 1):
        shapes[f"enc{i}.w"] = (cout, cin, 3, 3)
        shapes[f"enc{i}.b"] = (cout,)
        cin = cout
    shapes["head.w"] = (cfg.n_classes, cfg.channels[-1], 1, 1)
    shapes["head.b"] = (cfg.n_classes,)
    for s in cfg.latent_stages:
        cs = cfg.channels[s - 1]
        shapes[f"proj{s}.w1"] = (cs, cfg.hidden)
        shapes[f"proj{s}.b1"] = (cfg.hidden,)
        shapes[f"proj{s}.w2"] = (cfg.hidden, cfg.d_z)
        shapes[f"proj{s}.b2"] = (cfg.d_z,)
    return shapes


def init_params(cfg, seed):
    """Fan-in-scaled uniform weights, zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.split(".")[-1].startswith("b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def param_leaves(cfg):
    return {name: ad.leaf(name) for name in param_shapes(cfg)}


def forward(cfg, image_node, leaves, want_probs=True, latent_stages=None):
    """Build the forward graph for one image.

    Returns (probs_node or None, {stage: latents_node [N_p, d_z]}).  Passing
    the same `leaves` dict for several images shares the parameters between
    their subgraphs.
    """
    if latent_stages is None:
        latent_stages = ()
    x = image_node
    feats = []
    for i in range(1, cfg.n_stages + 1):
        x = ad.conv2d(x, leaves[f"enc{i}.w"], stride=2, padding=1)
        x = ad.relu(ad.bias_add(x, leaves[f"enc{i}.b"], axis=0))
        feats.append(x)

    probs = None
    if want_probs:
        logits = ad.bias_add(ad.conv2d(feats[-1], leaves["head.w"]), leaves["head.b"], axis=0)
        up = ad.upsample_bilinear(logits, cfg.img_h, cfg.img_w)
        probs = ad.softmax(up, axis=0)

    grid = cfg.grid()
    latents = {}
    for s in latent_stages:
        f = 2 ** s
        pooled = ad.avg_pool(feats[s - 1], cfg.patch_h // f, cfg.patch_w // f)
        flat = ad.transpose(
            ad.reshape(pooled, (cfg.channels[s - 1], grid.n_patches)), (1, 0)
        )
        h = ad.relu(ad.bias_add(ad.matmul(flat, leaves[f"proj{s}.w1"]), leaves[f"proj{s}.b1"], axis=1))
        latents[s] = ad.bias_add(ad.matmul(h, leaves[f"proj{s}.w2"]), leaves[f"proj{s}.b2"], axis=1)
    return probs, latents


def _check_image(cfg, image):
    img = np.asarray(image, dtype=np.float64)
    want = (cfg.in_channels, cfg.img_h, cfg.img_w)
    if img.shape != want:
        raise ValueError(f"image shape {img.shape} does not match config {want}")
    return img


def segment(cfg, params, image):
    """Per-pixel class distribution [N_c, H, W] for one image."""
    img = _check_image(cfg, image)
    leaves = param_leaves(cfg)
    probs, _ = forward(cfg, ad.const(img), leaves)
    g = ad.Graph(probs.named("probs"))
    return ad.evaluate(g, params)["probs"]


def project_latent(cfg, params, image, stages=None):
    """Patch latents {stage: [N_p, d_z]} for one image."""
    img = _check_image(cfg, image)
    if stages is None:
        stages = cfg.latent_stages
    leaves = param_leaves(cfg)
    _, latents = forward(cfg, ad.const(img), leaves, want_probs=False, latent_stages=stages)
    out = ad.stack([latents[s] for s in stages])
    g = ad.Graph(out.named("latents"))
    z = ad.evaluate(g, params)["latents"]
    return {s: z[i] for i, s in enumerate(stages)}


def config_hash(cfg):
    blob = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path, cfg, params, extra=None):
    """Write a versioned key->tensor dump with the config and its hash."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(cfg),
        "config_hash": config_hash(cfg),
        "extra": extra or {},
    }
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **params)


def load_checkpoint(path):
    """Returns (ModelConfig, params dict, extra metadata dict)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: data[k] for k in data.files if k != "__meta__"}
    raw = dict(meta["config"])
    for key in ("channels", "latent_stages"):
        raw[key] = tuple(raw[key])
    cfg = ModelConfig(**raw)
    if config_hash(cfg) != meta["config_hash"]:
        raise ValueError("checkpoint config hash mismatch")
    return cfg, params, meta["extra"]
