"""Two-phase adaptation training.

Phase 1 optimizes the base objective (supervised CE on translated source
and any labeled targets, plus entropy regularization on unlabeled targets).
The phase-1 model is then frozen, pseudo labels are written for every
unlabeled target scene, the network is re-initialized from a fresh seed
stream, and phase 2 optimizes the full objective with self-training and
patch-contrastive terms on top.

Everything is plain SGD with weight decay and a poly learning-rate decay,
single-threaded, and deterministic for a fixed config: reruns produce
bit-identical parameters and metrics.
"""

import dataclasses
import json
import os

import numpy as np

from . import autodiff as ad
from . import data
from . import disparity
from . import evaluation
from . import fda
from . import losses
from . import network
from . import pairing

METRIC_COLUMNS = (
    "iter",
    "lr",
    "L_sup_s",
    "L_sup_l",
    "L_ent",
    "L_self",
    "L_cont_gt",
    "L_cont_pseudo",
    "total",
    "val_miou",
)

VARIANTS = ("base", "base_self", "full")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    model: network.ModelConfig = network.ModelConfig()
    weights: losses.LossWeights = losses.LossWeights()
    iters: int = 3000  # per phase
    batch_source: int = 2
    batch_target: int = 2
    base_lr: float = 2.5e-4
    poly_power: float = 0.9
    weight_decay: float = 5e-4
    alpha: float = 3.0  # positive-pair disparity ceiling
    beta: float = 70.0  # negative-pair disparity floor
    k_negatives: int = 8
    tau: float = 0.07
    window_ratio: float = 0.05
    n_labeled: int = 0
    annotation_fraction: float = 1.0
    symmetric_pairs: bool = False  # also mine source->target queries
    seed: int = 0
    val_every: int = 500  # 0 disables in-phase validation
    pseudo_label_dir: str = None  # load instead of generating after phase 1
    out_dir: str = None

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError("iters must be positive")
        if self.batch_source < 1 or self.batch_target < 1:
            raise ValueError("batch sizes must be positive")
        if self.base_lr < 0:
            raise ValueError("base_lr must be nonnegative")
        if self.poly_power <= 0:
            raise ValueError("poly_power must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0 <= self.alpha < self.beta:
            raise ValueError("thresholds must satisfy 0 <= alpha < beta")
        if self.k_negatives < 1:
            raise ValueError("k_negatives must be at least 1")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.annotation_fraction <= 1.0:
            raise ValueError("annotation_fraction must be in (0, 1]")
        if self.n_labeled < 0:
            raise ValueError("n_labeled must be nonnegative")
        if self.val_every < 0:
            raise ValueError("val_every must be nonnegative")


def toy_benchmark_config(seed=0, n_labeled=5, **overrides):
    """The frozen desk-scale benchmark configuration (200/100/50 scenes).

    Departures from the TrainConfig defaults, recalibrated for a
    from-scratch toy network on one CPU core: much higher plain-SGD lr and
    a short fixed budget (the defaults assume a pretrained backbone),
    mining thresholds matched to the toy disparity distribution (the 99th
    percentile of cross-domain patch disparity here is ~68, so beta=70
    would never mine a negative), fewer negatives, contrastive weights
    rescaled for the mean-reduced loss implementation, and a third target
    batch slot (at this scale self-training only pays for the phase-2
    re-initialization when enough pseudo-labeled scenes flow through each
    step).
    """
    kw = dict(
        weights=losses.LossWeights(lambda_cont_gt=0.05, lambda_cont_pseudo=0.005),
        iters=1500,
        base_lr=0.15,
        alpha=3.0,
        beta=25.0,
        k_negatives=4,
        batch_target=3,
        n_labeled=n_labeled,
        seed=seed,
        val_every=0,
    )
    kw.update(overrides)
    return TrainConfig(**kw)


def poly_lr(it, max_iters, base_lr, power):
    """base_lr * (1 - it/max_iters)^power, the poly decay schedule."""
    if max_iters < 1:
        raise ValueError("max_iters must be positive")
    if not 0 <= it <= max_iters:
        raise ValueError(f"iter {it} outside [0, {max_iters}]")
    return base_lr * (1.0 - it / max_iters) ** power


def sgd_update(params, grads, lr, weight_decay):
    """Decoupled-free classic update: w <- w - lr * (g + wd * w)."""
    return {
        name: value - lr * (grads[name] + weight_decay * value)
        for name, value in params.items()
    }


def build_split(cfg, source_scenes, target_scenes):
    """SSDA split with block-wise partial annotation applied up front.

    The labeled-target selection and the per-scene annotation masks derive
    from cfg.seed, so every variant trained from one config sees the same
    supervision.
    """
    labeled, unlabeled, hidden = data.split_ssda(target_scenes, cfg.n_labeled, cfg.seed)
    if cfg.annotation_fraction < 1.0:
        ann_rng = np.random.default_rng([cfg.seed, 2])
        seeds = ann_rng.integers(2 ** 31, size=len(labeled))
        labeled = tuple(
            dataclasses.replace(
                s,
                labels=data.partial_annotation(
                    s.labels, cfg.annotation_fraction, int(seeds[i])
                ),
            )
            for i, s in enumerate(labeled)
        )
    return data.SsdaSplit(
        source=tuple(source_scenes),
        labeled_target=labeled,
        unlabeled_target=unlabeled,
        hidden_labels=hidden,
    )


def generate_pseudo_labels(model_cfg, params, unlabeled_scenes):
    """Argmax labels for every unlabeled scene from a frozen model."""
    return {
        s.scene_id: losses.pseudo_labels(network.segment(model_cfg, params, s.image))
        for s in unlabeled_scenes
    }


def load_pseudo_labels(directory, unlabeled_scenes, n_classes):
    """Read <scene_id>.png pseudo-label maps written by an earlier run."""
    from PIL import Image

    out = {}
    for s in unlabeled_scenes:
        path = os.path.join(directory, f"{s.scene_id}.png")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing pseudo-label file {path}")
        lab = np.asarray(Image.open(path))
        if lab.ndim != 2:
            raise ValueError(f"{path}: expected a single-channel label map")
        bad = (lab >= n_classes) & (lab != disparity.VOID)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"{path}: label {lab[r, c]} at pixel ({r},{c}) out of range")
        out[s.scene_id] = lab.astype(np.uint8)
    return out


def save_pseudo_labels(directory, pseudo):
    from PIL import Image

    os.makedirs(directory, exist_ok=True)
    for scene_id, lab in sorted(pseudo.items()):
        Image.fromarray(lab.astype(np.uint8), mode="L").save(
            os.path.join(directory, f"{scene_id}.png")
        )


def _mean_nodes(nodes):
    total = nodes[0]
    for n in nodes[1:]:
        total = ad.add(total, n)
    return total if len(nodes) == 1 else ad.scale(total, 1.0 / len(nodes))


class _DescriptorCache:
    """Pyramid descriptors per (role, scene_id); label maps are immutable."""

    def __init__(self, grid, n_classes):
        self.grid = grid
        self.n_classes = n_classes
        self._store = {}

    def get(self, role, scene_id, labels):
        key = (role, scene_id)
        if key not in self._store:
            self._store[key] = disparity.image_descriptors(labels, self.grid, self.n_classes)
        return self._store[key]


def _sample_batch(rng, mine_rng, cfg, split, cont_active):
    """Draw one step's scene indices and per-image mining seeds.

    The draw sequence depends only on static pool sizes and config flags,
    never on runtime outcomes, so the stream stays aligned across reruns.
    Mining seeds come from their own stream so that toggling the
    contrastive term leaves the batch sequence untouched; objective
    variants are then paired comparisons over identical batches.
    """
    n_src = len(split.source)
    src_idx = rng.choice(n_src, size=cfg.batch_source, replace=n_src < cfg.batch_source)
    n_lab = len(split.labeled_target)
    n_unl = len(split.unlabeled_target)
    n_tgt_total = n_lab + n_unl
    if n_tgt_total:
        style_idx = rng.integers(0, n_tgt_total, size=cfg.batch_source)
    else:
        style_idx = np.array([], dtype=np.int64)

    picks = []  # (scene, labeled?) in slot order
    if n_unl == 0:
        lab_slots, unl_slots = min(cfg.batch_target, n_lab), 0
    elif n_lab == 0:
        lab_slots, unl_slots = 0, cfg.batch_target
    else:  # one labeled slot has priority, the rest go to unlabeled scenes
        lab_slots, unl_slots = 1, cfg.batch_target - 1
    if lab_slots:
        for i in rng.integers(0, n_lab, size=lab_slots):
            picks.append((split.labeled_target[int(i)], True))
    if unl_slots:
        idx = rng.choice(n_unl, size=unl_slots, replace=n_unl < unl_slots)
        for i in idx:
            picks.append((split.unlabeled_target[int(i)], False))

    mining = []
    if cont_active:
        for _ in picks:
            slot = int(mine_rng.integers(0, cfg.batch_source))
            seeds = mine_rng.integers(2 ** 31, size=2 if cfg.symmetric_pairs else 1)
            mining.append((slot, [int(x) for x in seeds]))
    return [split.source[int(i)] for i in src_idx], style_idx, picks, mining


def _contrastive_nodes(cfg, mined, lat_q, lat_k):
    """Stage-summed batched InfoNCE node for one mined query/key image pair."""
    q = np.array([m.query for m in mined])
    pos = np.array([m.positive for m in mined])
    negs = np.array([m.negatives for m in mined])
    per_stage = []
    for s in cfg.model.latent_stages:
        per_stage.append(
            pairing.contrastive_loss_batch(
                ad.take_rows(lat_q[s], q), lat_k[s], pos, negs, cfg.tau
            )
        )
    total = per_stage[0]
    for n in per_stage[1:]:
        total = ad.add(total, n)
    return total


def _build_step(cfg, phase, sources, translated, picks, mining, pseudo, cache):
    """Assemble one training step's loss graph.

    Returns (graph, components) where components maps every logged name to
    a node or a plain float (floats stand in for terms with no inputs this
    step, e.g. entropy with no unlabeled scene in the batch).
    """
    mc = cfg.model
    w = cfg.weights
    cont_active = phase == losses.FULL and (
        w.lambda_cont_gt != 0.0 or w.lambda_cont_pseudo != 0.0
    )
    stages = mc.latent_stages if cont_active else ()
    leaves = network.param_leaves(mc)

    sup_nodes = []
    src_lat = []
    for scene, image in zip(sources, translated):
        probs, lat = network.forward(
            mc, ad.const(image), leaves, want_probs=True, latent_stages=stages
        )
        sup_nodes.append(losses.cross_entropy(probs, scene.labels, mc.n_classes))
        src_lat.append(lat)
    components = {"sup_s": _mean_nodes(sup_nodes)}

    sup_l_nodes = []
    ent_nodes = []
    self_nodes = []
    cont_gt_nodes = []
    cont_pseudo_nodes = []
    for t, (scene, is_labeled) in enumerate(picks):
        probs, lat = network.forward(
            mc, ad.const(scene.image), leaves, want_probs=True, latent_stages=stages
        )
        if is_labeled:
            sup_l_nodes.append(losses.cross_entropy(probs, scene.labels, mc.n_classes))
        else:
            if w.lambda_ent != 0.0:  # zero weight: keep the subgraph out entirely
                ent_nodes.append(losses.entropy_reg(probs, w.eta))
            if phase == losses.FULL and w.lambda_self != 0.0:
                self_nodes.append(
                    losses.cross_entropy(probs, pseudo[scene.scene_id], mc.n_classes)
                )
        if cont_active:
            lam = w.lambda_cont_gt if is_labeled else w.lambda_cont_pseudo
            if lam == 0.0:
                continue
            if is_labeled:
                desc_t = cache.get("gt", scene.scene_id, scene.labels)
                bucket = cont_gt_nodes
            else:
                desc_t = cache.get("pseudo", scene.scene_id, pseudo[scene.scene_id])
                bucket = cont_pseudo_nodes
            slot, seeds = mining[t]
            desc_s = cache.get("src", sources[slot].scene_id, sources[slot].labels)
            d = disparity.disparity_matrix(desc_t, desc_s)
            mined = pairing.mine_pairs(d, cfg.alpha, cfg.beta, cfg.k_negatives, seeds[0])
            if mined:
                bucket.append(_contrastive_nodes(cfg, mined, lat, src_lat[slot]))
            if cfg.symmetric_pairs:
                mined = pairing.mine_pairs(
                    d.T, cfg.alpha, cfg.beta, cfg.k_negatives, seeds[1]
                )
                if mined:
                    bucket.append(_contrastive_nodes(cfg, mined, src_lat[slot], lat))

    if sup_l_nodes:
        components["sup_l"] = _mean_nodes(sup_l_nodes)
    components["ent"] = _mean_nodes(ent_nodes) if ent_nodes else 0.0
    if phase == losses.FULL:
        components["self"] = _mean_nodes(self_nodes) if self_nodes else 0.0
    if cont_gt_nodes:
        components["cont_gt"] = _mean_nodes(cont_gt_nodes)
    if cont_pseudo_nodes:
        components["cont_pseudo"] = _mean_nodes(cont_pseudo_nodes)

    total = losses.total_loss(components, w, phase)
    if not isinstance(total, ad.Node):  # every term degenerated to a float
        total = ad.const(total)
    for name, node in components.items():
        if isinstance(node, ad.Node):
            node.named(name)
    graph = ad.Graph(total.named("total"))
    return graph, components


def _logged_total(row, w, phase):
    """Recompute the weighted sum from logged components, mirroring the
    graph's summation order so the comparison is exact-order arithmetic."""
    total = row["L_sup_s"] + row["L_sup_l"]
    total = total + w.lambda_ent * row["L_ent"]
    if phase == losses.FULL:
        total = total + w.lambda_self * row["L_self"]
        total = total + w.lambda_cont_gt * row["L_cont_gt"]
        total = total + w.lambda_cont_pseudo * row["L_cont_pseudo"]
    return total


def train_phase(params, split, cfg, phase, pseudo=None, val_scenes=None, dump_dir=None):
    """Run one optimization phase; returns (trained params, metric rows).

    `pseudo` maps unlabeled scene ids to label maps and is required for the
    FULL phase whenever self-training or pseudo-contrastive terms carry
    weight.  A non-finite loss aborts with a diagnostic dump of the step's
    inputs (when `dump_dir` is given) so the step can be replayed.
    """
    if phase not in (losses.BASE, losses.FULL):
        raise ValueError(f"unknown phase {phase!r}")
    w = cfg.weights
    needs_pseudo = phase == losses.FULL and (
        w.lambda_self != 0.0 or w.lambda_cont_pseudo != 0.0
    )
    if needs_pseudo and split.unlabeled_target and pseudo is None:
        raise ValueError("FULL phase requires pseudo labels for unlabeled scenes")
    if not split.source:
        raise ValueError("split has no source scenes")

    mc = cfg.model
    cont_active = phase == losses.FULL and (
        w.lambda_cont_gt != 0.0 or w.lambda_cont_pseudo != 0.0
    )
    phase_idx = 0 if phase == losses.BASE else 1
    rng = np.random.default_rng([cfg.seed, phase_idx, 1])
    mine_rng = np.random.default_rng([cfg.seed, phase_idx, 2])
    cache = _DescriptorCache(mc.grid(), mc.n_classes)
    target_images = [s.image for s in split.labeled_target + split.unlabeled_target]

    rows = []
    for it in range(cfg.iters):
        lr = poly_lr(it, cfg.iters, cfg.base_lr, cfg.poly_power)
        sources, style_idx, picks, mining = _sample_batch(
            rng, mine_rng, cfg, split, cont_active
        )
        if target_images:
            translated = [
                fda.translate(s.image, target_images[int(j)], cfg.window_ratio)
                for s, j in zip(sources, style_idx)
            ]
        else:  # no target pool at all: train on untranslated source
            translated = [s.image for s in sources]
        graph, components = _build_step(
            cfg, phase, sources, translated, picks, mining, pseudo, cache
        )
        try:
            values, grads = ad.forward_backward(graph, params)
        except ad.NonFiniteError:
            if dump_dir is not None:
                _dump_step(dump_dir, it, params, sources, translated, picks)
            raise

        row = {"iter": it, "lr": lr}
        for name in ("sup_s", "sup_l", "ent", "self", "cont_gt", "cont_pseudo"):
            if name in values:
                v = float(values[name])
            elif name in components:  # degenerate float component
                v = float(components[name])
            else:
                v = 0.0
            row[f"L_{name}"] = v
        row["total"] = float(values["total"])
        check = _logged_total(row, w, phase)
        if abs(row["total"] - check) > 1e-9 * max(1.0, abs(row["total"])):
            raise AssertionError(
                f"logged total {row['total']!r} != component sum {check!r} at iter {it}"
            )

        params = sgd_update(params, grads, lr, cfg.weight_decay)

        row["val_miou"] = ""
        if val_scenes and cfg.val_every and (it + 1) % cfg.val_every == 0:
            _, _, mean = evaluation.evaluate_scenes(mc, params, val_scenes)
            row["val_miou"] = mean
        rows.append(row)
    return params, rows


def _dump_step(dump_dir, it, params, sources, translated, picks):
    os.makedirs(dump_dir, exist_ok=True)
    payload = {f"param/{k}": v for k, v in params.items()}
    for i, img in enumerate(translated):
        payload[f"translated/{i}"] = img
    payload["scene_ids"] = np.array(
        [s.scene_id for s in sources] + [s.scene_id for s, _ in picks]
    )
    payload["iter"] = np.array(it)
    np.savez(os.path.join(dump_dir, f"nonfinite_iter{it:06d}.npz"), **payload)


def write_metrics_csv(path, rows):
    """Fixed-format metrics table; identical runs serialize identically."""
    with open(path, "w") as f:
        f.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            cells = [str(row["iter"])]
            for col in METRIC_COLUMNS[1:-1]:
                cells.append(f"{row[col]:.10g}")
            v = row["val_miou"]
            cells.append("" if v == "" else f"{v:.6f}")
            f.write(",".join(cells) + "\n")


def _variant_weights(weights, variant):
    if variant == "base_self":
        return dataclasses.replace(weights, lambda_cont_gt=0.0, lambda_cont_pseudo=0.0)
    return weights


def run_two_phase(cfg, source_scenes, target_scenes, val_scenes, out_dir=None, variant="full"):
    """Full training recipe; returns (params, report dict).

    variant selects the objective for comparison runs: "base" stops after
    phase 1, "base_self" drops the contrastive terms from phase 2, "full"
    trains the complete phase-2 objective.  When out_dir is given, writes
    per-phase checkpoints and metrics, pseudo labels, an evaluation report,
    and the resolved config.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    out_dir = out_dir if out_dir is not None else cfg.out_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)

    split = build_split(cfg, source_scenes, target_scenes)
    mc = cfg.model

    params = network.init_params(mc, [cfg.seed, 0])
    params, rows1 = train_phase(
        params, split, cfg, losses.BASE, val_scenes=val_scenes, dump_dir=out_dir
    )
    rows2 = None
    pseudo = None
    if variant != "base":
        if cfg.pseudo_label_dir is not None:
            pseudo = load_pseudo_labels(
                cfg.pseudo_label_dir, split.unlabeled_target, mc.n_classes
            )
        else:
            pseudo = generate_pseudo_labels(mc, params, split.unlabeled_target)
        phase1_params = params
        cfg2 = dataclasses.replace(cfg, weights=_variant_weights(cfg.weights, variant))
        params = network.init_params(mc, [cfg.seed, 1])
        params, rows2 = train_phase(
            params, split, cfg2, losses.FULL, pseudo=pseudo,
            val_scenes=val_scenes, dump_dir=out_dir,
        )

    cm, iou, mean = evaluation.evaluate_scenes(mc, params, val_scenes)
    report = {
        "variant": variant,
        "val_miou": mean,
        "per_class_iou": [None if np.isnan(v) else float(v) for v in iou],
        "n_labeled": cfg.n_labeled,
        "seed": cfg.seed,
    }

    if out_dir is not None:
        write_metrics_csv(os.path.join(out_dir, "metrics_phase1.csv"), rows1)
        network.save_checkpoint(
            os.path.join(out_dir, "checkpoint_phase1.npz"),
            mc,
            phase1_params if variant != "base" else params,
            extra={"phase": 1, "variant": variant},
        )
        if rows2 is not None:
            write_metrics_csv(os.path.join(out_dir, "metrics_phase2.csv"), rows2)
            network.save_checkpoint(
                os.path.join(out_dir, "checkpoint_phase2.npz"),
                mc,
                params,
                extra={"phase": 2, "variant": variant},
            )
        if pseudo is not None and cfg.pseudo_label_dir is None:
            save_pseudo_labels(os.path.join(out_dir, "pseudo"), pseudo)
        evaluation.write_report_csv(
            os.path.join(out_dir, "report.csv"), iou, mean, data.CLASS_NAMES
        )
        resolved = dataclasses.asdict(cfg)
        resolved["variant"] = variant
        with open(os.path.join(out_dir, "resolved_config.json"), "w") as f:
            json.dump(resolved, f, indent=2, sort_keys=True, default=str)
            f.write("\n")
    return params, report
