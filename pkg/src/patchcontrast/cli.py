"""Command-line front end: one executable, one subcommand per pipeline stage.

Every subcommand is a thin adapter over the library modules, shares the
same JSON config schema (see config.py), and writes the resolved
configuration next to its outputs.  Failures exit nonzero after printing a
single `error: <Type>: <message>` line to stderr.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import data, disparity, evaluation, fda, losses, network, pairing, train

TAU_CELLS = (0.04, 0.07, 0.1)
LAMBDA_CELLS = ((0.01, 0.001), (0.1, 0.01), (1.0, 0.1), (0.1, 0.1))
ALPHA_BETA_CELLS = ((1.0, 25.0), (3.0, 25.0), (3.0, 40.0), (5.0, 50.0))
PATCH_CELLS = ((16, 32), (32, 32), (32, 64))
ANNOTATION_CELLS = (0.25, 0.5, 1.0)

AXES = ("loss-terms", "lambda", "tau", "alpha-beta", "patch-size", "matching", "annotation")


def _load_image_png(path):
    from PIL import Image

    rgb = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return rgb.transpose(2, 0, 1)


def _save_image_png(path, image):
    from PIL import Image

    Image.fromarray(data.image_to_u8(image).transpose(1, 2, 0), mode="RGB").save(path)


def _load_label_png(path, n_classes=data.N_CLASSES):
    from PIL import Image

    lab = np.asarray(Image.open(path), dtype=np.uint8)
    if lab.ndim != 2:
        raise ValueError(f"{path}: expected a single-channel label map")
    bad = (lab >= n_classes) & (lab != data.VOID)
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ValueError(f"{path}: label value {lab[y, x]} at pixel ({y},{x}) out of range")
    return lab


def _resolve(args):
    cfg = cfgmod.load_config(args.config)
    cfgmod.apply_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "out_dir", None) is not None:
        cfg["out_dir"] = args.out_dir
    return cfg


def _scene_pools(cfg):
    """Scenes for a run: loaded from directories when set, else generated."""
    d = cfg["data"]
    dirs = (d["source_dir"], d["target_dir"], d["val_dir"])
    if any(dirs):
        if not all(dirs):
            raise ValueError("set all of data.source_dir/target_dir/val_dir or none")
        pools = []
        for root, domain in zip(dirs, (data.SOURCE, data.TARGET, data.TARGET)):
            pools.append(
                data.load_dataset(
                    os.path.join(root, "images"), os.path.join(root, "labels"), domain
                )
            )
        return tuple(pools)
    return data.make_benchmark(d["n_source"], d["n_target"], d["n_val"], cfg["seed"])


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_data(args):
    cfg = _resolve(args)
    out = cfg["out_dir"]
    if not out:
        raise ValueError("generate-data requires --out-dir")
    d = cfg["data"]
    source, target, val = data.make_benchmark(
        d["n_source"], d["n_target"], d["n_val"], cfg["seed"]
    )
    for name, scenes in (("source", source), ("target", target), ("val", val)):
        data.save_dataset(scenes, os.path.join(out, name))
    src_style, tgt_style = data.default_styles()
    manifest = {
        "seed": cfg["seed"],
        "counts": {"source": len(source), "target": len(target), "val": len(val)},
        "styles": {
            "source": dataclasses.asdict(src_style),
            "target": dataclasses.asdict(tgt_style),
        },
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    cfgmod.write_resolved(os.path.join(out, "resolved_config.json"), cfg)
    print(f"wrote {len(source)}+{len(target)}+{len(val)} scenes under {out}")
    return 0


def cmd_translate(args):
    cfg = _resolve(args)
    ratio = cfg["window_ratio"] if args.window_ratio is None else args.window_ratio
    src = _load_image_png(args.source)
    tgt = _load_image_png(args.target)
    out = fda.translate(src, tgt, ratio)
    _save_image_png(args.out, out)
    cfgmod.write_resolved(args.out + ".config.json", cfg, {"window_ratio": ratio})
    print(f"translated {args.source} -> {args.out} (window_ratio={ratio})")
    return 0


def cmd_disparity(args):
    cfg = _resolve(args)
    mc = cfgmod.to_train_config(cfg).model
    lab_a = _load_label_png(args.labels_a)
    lab_b = _load_label_png(args.labels_b)
    grid = disparity.PatchGrid(lab_a.shape[0], lab_a.shape[1], mc.patch_h, mc.patch_w)
    da = disparity.image_descriptors(lab_a, grid, mc.n_classes)
    db = disparity.image_descriptors(lab_b, grid, mc.n_classes)
    d = disparity.disparity_matrix(da, db)
    if args.patch is not None:
        i, j = args.patch
        print(f"D={d[i, j]:.6g}")
    else:
        for row in d:
            print(",".join(f"{v:.6f}" for v in row))
    return 0


def cmd_mine_pairs(args):
    cfg = _resolve(args)
    tc = cfgmod.to_train_config(cfg)
    lab_q = _load_label_png(args.labels_query)
    lab_k = _load_label_png(args.labels_key)
    grid = disparity.PatchGrid(lab_q.shape[0], lab_q.shape[1], tc.model.patch_h, tc.model.patch_w)
    dq = disparity.image_descriptors(lab_q, grid, tc.model.n_classes)
    dk = disparity.image_descriptors(lab_k, grid, tc.model.n_classes)
    mined = pairing.mine_pairs(
        disparity.disparity_matrix(dq, dk), tc.alpha, tc.beta, tc.k_negatives, cfg["seed"]
    )
    qid = os.path.splitext(os.path.basename(args.labels_query))[0]
    kid = os.path.splitext(os.path.basename(args.labels_key))[0]
    sets = pairing.to_pair_sets(mined, qid, kid, args.label_source)
    with open(args.out, "w") as f:
        for ps in sets:
            f.write(pairing.format_pair_line(ps) + "\n")
    cfgmod.write_resolved(args.out + ".config.json", cfg)
    print(f"mined {len(sets)} pairs -> {args.out}")
    return 0


def cmd_train(args):
    cfg = _resolve(args)
    out = cfg["out_dir"]
    if not out:
        raise ValueError("train requires --out-dir")
    tc = cfgmod.to_train_config(cfg)
    source, target, val = _scene_pools(cfg)
    _, report = train.run_two_phase(tc, source, target, val, out_dir=out, variant=args.variant)
    cfgmod.write_resolved(
        os.path.join(out, "resolved_config.json"), cfg, {"variant": args.variant}
    )
    print(f"variant={args.variant} val_miou={report['val_miou']:.6f}")
    return 0


def cmd_eval(args):
    cfg = _resolve(args)
    out = cfg["out_dir"]
    if not out:
        raise ValueError("eval requires --out-dir")
    os.makedirs(out, exist_ok=True)
    mc, params, _ = network.load_checkpoint(args.checkpoint)
    if args.images and args.labels:
        scenes = data.load_dataset(args.images, args.labels, data.TARGET)
    elif args.images or args.labels:
        raise ValueError("pass both --images and --labels, or neither")
    else:
        d = cfg["data"]
        _, _, scenes = data.make_benchmark(d["n_source"], d["n_target"], d["n_val"], cfg["seed"])
    cm, iou, mean = evaluation.evaluate_scenes(mc, params, scenes)
    evaluation.write_report_csv(os.path.join(out, "report.csv"), iou, mean, data.CLASS_NAMES)
    if args.dump_predictions:
        from PIL import Image

        pred_dir = os.path.join(out, "predictions")
        os.makedirs(pred_dir, exist_ok=True)
        for s in scenes:
            pred = evaluation.predict_labels(mc, params, s.image)
            Image.fromarray(data.labels_to_color(pred), mode="RGB").save(
                os.path.join(pred_dir, s.scene_id + ".png")
            )
    cfgmod.write_resolved(os.path.join(out, "resolved_config.json"), cfg)
    print(f"val_miou={mean:.6f}")
    return 0


def _ablate_cells(axis, cfg):
    """(label, config-dict overrides, variant) per sweep cell."""
    tc_w = cfg["weights"]
    if axis == "loss-terms":
        return [(v, {}, v) for v in ("base", "base_self", "full")]
    if axis == "lambda":
        return [
            (f"gt={g}/pseudo={p}", {"weights": {**tc_w, "lambda_cont_gt": g, "lambda_cont_pseudo": p}}, "full")
            for g, p in LAMBDA_CELLS
        ]
    if axis == "tau":
        return [(f"tau={t}", {"tau": t}, "full") for t in TAU_CELLS]
    if axis == "alpha-beta":
        return [(f"alpha={a}/beta={b}", {"alpha": a, "beta": b}, "full") for a, b in ALPHA_BETA_CELLS]
    if axis == "patch-size":
        return [
            (f"patch={h}x{w}", {"model": {**cfg["model"], "patch_h": h, "patch_w": w}}, "full")
            for h, w in PATCH_CELLS
        ]
    if axis == "matching":
        return [
            ("target-to-source", {"symmetric_pairs": False}, "full"),
            ("symmetric", {"symmetric_pairs": True}, "full"),
        ]
    if axis == "annotation":
        n_lab = cfg["n_labeled"] or 20  # the sweep needs labeled targets
        return [
            (f"fraction={f}", {"annotation_fraction": f, "n_labeled": n_lab}, "full")
            for f in ANNOTATION_CELLS
        ]
    raise ValueError(f"unknown ablation axis {axis!r}")


def cmd_ablate(args):
    cfg = _resolve(args)
    out = cfg["out_dir"]
    if not out:
        raise ValueError("ablate requires --out-dir")
    os.makedirs(out, exist_ok=True)
    source, target, val = _scene_pools(cfg)
    rows = []
    for label, patch, variant in _ablate_cells(args.axis, cfg):
        cell_cfg = json.loads(json.dumps(cfg))  # deep copy
        cfgmod._merge(cell_cfg, patch)
        tc = cfgmod.to_train_config(cell_cfg)
        cell_dir = os.path.join(out, label.replace("/", "_").replace("=", "-"))
        _, report = train.run_two_phase(tc, source, target, val, out_dir=cell_dir, variant=variant)
        rows.append((label, report["val_miou"]))
        print(f"{args.axis}: {label} val_miou={report['val_miou']:.6f}")
    csv_path = os.path.join(out, f"ablation_{args.axis}.csv")
    with open(csv_path, "w") as f:
        f.write("axis,cell,val_miou\n")
        for label, miou in rows:
            f.write(f"{args.axis},{label},{miou:.6f}\n")
    cfgmod.write_resolved(os.path.join(out, "resolved_config.json"), cfg, {"axis": args.axis})
    print(f"wrote {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p, out_dir=True):
    p.add_argument("--config", help="JSON config file (defaults applied underneath)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. weights.lambda_self=0.5")
    p.add_argument("--seed", type=int, help="global seed override")
    if out_dir:
        p.add_argument("--out-dir", help="output directory")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="patchcontrast",
        description="Patch-contrastive domain adaptation pipeline (toy scale).",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write the synthetic two-domain benchmark")
    _add_common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("translate", help="spectral-window translation of one image")
    _add_common(p, out_dir=False)
    p.add_argument("--source", required=True, help="source image PNG")
    p.add_argument("--target", required=True, help="target style image PNG")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--window-ratio", type=float, help="override the config window_ratio")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("disparity", help="pyramid label disparity between two maps")
    _add_common(p, out_dir=False)
    p.add_argument("--labels-a", required=True)
    p.add_argument("--labels-b", required=True)
    p.add_argument("--patch", nargs=2, type=int, metavar=("I", "J"),
                   help="print D for patch I of A vs patch J of B instead of the matrix")
    p.set_defaults(func=cmd_disparity)

    p = sub.add_parser("mine-pairs", help="mine contrastive pairs from two label maps")
    _add_common(p, out_dir=False)
    p.add_argument("--labels-query", required=True)
    p.add_argument("--labels-key", required=True)
    p.add_argument("--out", required=True, help="pair-list output file")
    p.add_argument("--label-source", default=pairing.GROUND_TRUTH,
                   choices=(pairing.GROUND_TRUTH, pairing.PSEUDO))
    p.set_defaults(func=cmd_mine_pairs)

    p = sub.add_parser("train", help="two-phase training run")
    _add_common(p)
    p.add_argument("--variant", default="full", choices=train.VARIANTS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--images", help="image directory (with --labels)")
    p.add_argument("--labels", help="label directory (with --images)")
    p.add_argument("--dump-predictions", action="store_true",
                   help="write color prediction PNGs")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one ablation axis, one CSV row per cell")
    _add_common(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # single-line, machine-parseable failure report
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
