"""Training-loop contracts: schedule, determinism, progress, invariants."""

import dataclasses

import numpy as np
import pytest

from patchcontrast import autodiff as ad
from patchcontrast import data, evaluation, losses, network, train


def tiny_cfg(**kw):
    """Small enough to train in test time, same code paths as full scale."""
    kw.setdefault("iters", 5)
    kw.setdefault("base_lr", 0.2)
    kw.setdefault("val_every", 0)
    kw.setdefault("beta", 25.0)
    kw.setdefault("k_negatives", 2)
    kw.setdefault("weights", losses.LossWeights(lambda_cont_gt=0.1, lambda_cont_pseudo=0.01))
    return train.TrainConfig(**kw)


@pytest.fixture(scope="module")
def pools():
    return data.make_benchmark(8, 8, 3, seed=11)


# ---------------------------------------------------------------------------
# poly schedule


def test_poly_lr_anchors():
    assert train.poly_lr(0, 3000, 2.5e-4, 0.9) == 2.5e-4
    assert train.poly_lr(3000, 3000, 2.5e-4, 0.9) == 0.0
    mid = train.poly_lr(1500, 3000, 2.5e-4, 0.9)
    assert mid == pytest.approx(2.5e-4 * 0.5 ** 0.9)
    assert mid == pytest.approx(1.3397e-4, abs=1e-8)


def test_poly_lr_monotone_decreasing():
    vals = [train.poly_lr(i, 100, 0.1, 0.9) for i in range(101)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_poly_lr_out_of_range():
    with pytest.raises(ValueError):
        train.poly_lr(-1, 100, 0.1, 0.9)
    with pytest.raises(ValueError):
        train.poly_lr(101, 100, 0.1, 0.9)
    with pytest.raises(ValueError):
        train.poly_lr(0, 0, 0.1, 0.9)


# ---------------------------------------------------------------------------
# config validation


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_cfg(iters=0)
    with pytest.raises(ValueError):
        tiny_cfg(alpha=30.0, beta=25.0)
    with pytest.raises(ValueError):
        tiny_cfg(k_negatives=0)
    with pytest.raises(ValueError):
        tiny_cfg(tau=0.0)
    with pytest.raises(ValueError):
        tiny_cfg(annotation_fraction=0.0)
    with pytest.raises(ValueError):
        tiny_cfg(base_lr=-0.1)


# ---------------------------------------------------------------------------
# single-phase mechanics


def test_zero_lr_leaves_params_unchanged(pools):
    src, tgt, _ = pools
    cfg = tiny_cfg(base_lr=0.0, iters=3, n_labeled=2, seed=5)
    split = train.build_split(cfg, src, tgt)
    p0 = network.init_params(cfg.model, 0)
    p1, rows = train.train_phase(p0, split, cfg, losses.BASE)
    assert len(rows) == 3
    for k in p0:
        assert np.array_equal(p0[k], p1[k])


def test_same_seed_bit_identical(pools):
    src, tgt, _ = pools
    cfg = tiny_cfg(iters=4, n_labeled=2, seed=9)
    split = train.build_split(cfg, src, tgt)
    runs = []
    for _ in range(2):
        p, rows = train.train_phase(network.init_params(cfg.model, 1), split, cfg, losses.BASE)
        runs.append((p, rows))
    for k in runs[0][0]:
        assert np.array_equal(runs[0][0][k], runs[1][0][k])
    assert runs[0][1] == runs[1][1]


def test_base_training_reduces_source_loss():
    """Source-only setting: N_l=0 and zero entropy weight."""
    drops = []
    for seed in range(3):
        src, tgt, _ = data.make_benchmark(8, 4, 0, seed=20 + seed)
        cfg = tiny_cfg(
            iters=200, n_labeled=0, seed=seed, base_lr=0.3,
            weights=losses.LossWeights(lambda_ent=0.0),
        )
        split = train.build_split(cfg, src, tgt)
        _, rows = train.train_phase(network.init_params(cfg.model, seed), split, cfg, losses.BASE)
        first = np.mean([r["L_sup_s"] for r in rows[:10]])
        last = np.mean([r["L_sup_s"] for r in rows[-10:]])
        drops.append(first - last)
    assert np.mean(drops) > 0.2  # averaged over seeds, loss at 200 << loss at 0


def test_total_equals_weighted_component_sum(pools):
    src, tgt, _ = pools
    cfg = tiny_cfg(iters=6, n_labeled=2, seed=3)
    split = train.build_split(cfg, src, tgt)
    p = network.init_params(cfg.model, 2)
    p, rows1 = train.train_phase(p, split, cfg, losses.BASE)
    pseudo = train.generate_pseudo_labels(cfg.model, p, split.unlabeled_target)
    _, rows2 = train.train_phase(
        network.init_params(cfg.model, 3), split, cfg, losses.FULL, pseudo=pseudo
    )
    w = cfg.weights
    for rows, phase in ((rows1, losses.BASE), (rows2, losses.FULL)):
        for r in rows:
            want = r["L_sup_s"] + r["L_sup_l"] + w.lambda_ent * r["L_ent"]
            if phase == losses.FULL:
                want += (
                    w.lambda_self * r["L_self"]
                    + w.lambda_cont_gt * r["L_cont_gt"]
                    + w.lambda_cont_pseudo * r["L_cont_pseudo"]
                )
            assert r["total"] == pytest.approx(want, abs=1e-9)


def test_full_phase_requires_pseudo(pools):
    src, tgt, _ = pools
    cfg = tiny_cfg(n_labeled=1, seed=0)
    split = train.build_split(cfg, src, tgt)
    with pytest.raises(ValueError, match="pseudo"):
        train.train_phase(network.init_params(cfg.model, 0), split, cfg, losses.FULL)


def test_full_phase_mines_contrastive_pairs():
    """With permissive thresholds the contrastive terms actually fire."""
    src, tgt, _ = data.make_benchmark(10, 10, 0, seed=2)
    cfg = tiny_cfg(iters=12, n_labeled=3, seed=1, beta=20.0, k_negatives=2)
    split = train.build_split(cfg, src, tgt)
    p = network.init_params(cfg.model, 4)
    pseudo = train.generate_pseudo_labels(cfg.model, p, split.unlabeled_target)
    _, rows = train.train_phase(p, split, cfg, losses.FULL, pseudo=pseudo)
    fired = [r for r in rows if r["L_cont_gt"] != 0.0 or r["L_cont_pseudo"] != 0.0]
    assert fired, "no contrastive pairs mined in any of 12 steps"


def test_nonfinite_loss_dumps_diagnostics(tmp_path, pools):
    src, tgt, _ = pools
    cfg = tiny_cfg(iters=2, n_labeled=0, seed=0)
    split = train.build_split(cfg, src, tgt)
    params = network.init_params(cfg.model, 0)
    params["head.w"] = params["head.w"] + np.inf  # poisoned weights
    with pytest.raises(ad.NonFiniteError):
        train.train_phase(params, split, cfg, losses.BASE, dump_dir=tmp_path)
    dumps = list(tmp_path.glob("nonfinite_iter*.npz"))
    assert len(dumps) == 1
    payload = np.load(dumps[0])
    assert "param/head.w" in payload
    assert payload["iter"] == 0


# ---------------------------------------------------------------------------
# split construction


def test_build_split_partial_annotation(pools):
    src, tgt, _ = pools
    cfg = tiny_cfg(n_labeled=3, annotation_fraction=0.25, seed=7)
    split = train.build_split(cfg, src, tgt)
    assert len(split.labeled_target) == 3
    full = train.build_split(tiny_cfg(n_labeled=3, seed=7), src, tgt)
    for part, whole in zip(split.labeled_target, full.labeled_target):
        assert part.scene_id == whole.scene_id
        void = part.labels == data.VOID
        assert void.any()  # most blocks dropped
        assert np.array_equal(part.labels[~void], whole.labels[~void])


def test_build_split_same_seed_same_selection(pools):
    src, tgt, _ = pools
    a = train.build_split(tiny_cfg(n_labeled=4, seed=3), src, tgt)
    b = train.build_split(tiny_cfg(n_labeled=4, seed=3), src, tgt)
    assert [s.scene_id for s in a.labeled_target] == [s.scene_id for s in b.labeled_target]


# ---------------------------------------------------------------------------
# two-phase orchestration


def test_run_two_phase_reinit_differs_and_pseudo_written(tmp_path, pools):
    src, tgt, val = pools
    cfg = tiny_cfg(iters=4, n_labeled=2, seed=13)
    out = tmp_path / "run"
    params, report = train.run_two_phase(cfg, src, tgt, val, out_dir=out, variant="full")
    assert (out / "metrics_phase1.csv").exists()
    assert (out / "metrics_phase2.csv").exists()
    assert (out / "report.csv").exists()
    assert (out / "resolved_config.json").exists()
    ck1 = network.load_checkpoint(out / "checkpoint_phase1.npz")
    ck2 = network.load_checkpoint(out / "checkpoint_phase2.npz")
    # phases start from different seed streams, so trained params differ
    assert any(not np.array_equal(ck1[1][k], ck2[1][k]) for k in ck1[1])
    pseudo_files = sorted((out / "pseudo").glob("*.png"))
    assert len(pseudo_files) == len(tgt) - 2
    assert 0.0 <= report["val_miou"] <= 1.0


def test_run_two_phase_base_variant_single_phase(tmp_path, pools):
    src, tgt, val = pools
    cfg = tiny_cfg(iters=3, n_labeled=0, seed=1)
    out = tmp_path / "base"
    _, report = train.run_two_phase(cfg, src, tgt, val, out_dir=out, variant="base")
    assert report["variant"] == "base"
    assert (out / "metrics_phase1.csv").exists()
    assert not (out / "metrics_phase2.csv").exists()
    assert not (out / "pseudo").exists()


def test_run_two_phase_deterministic_metrics(tmp_path, pools):
    src, tgt, val = pools
    cfg = tiny_cfg(iters=4, n_labeled=2, seed=21, val_every=2)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        train.run_two_phase(cfg, src, tgt, val, out_dir=out, variant="full")
        outs.append(
            (out / "metrics_phase1.csv").read_bytes()
            + (out / "metrics_phase2.csv").read_bytes()
        )
    assert outs[0] == outs[1]


def test_base_self_variant_zeroes_contrastive(tmp_path, pools):
    src, tgt, val = pools
    cfg = tiny_cfg(iters=4, n_labeled=2, seed=2, beta=20.0)
    out = tmp_path / "bs"
    train.run_two_phase(cfg, src, tgt, val, out_dir=out, variant="base_self")
    rows = (out / "metrics_phase2.csv").read_text().strip().splitlines()[1:]
    cols = train.METRIC_COLUMNS
    for line in rows:
        vals = dict(zip(cols, line.split(",")))
        assert float(vals["L_cont_gt"]) == 0.0
        assert float(vals["L_cont_pseudo"]) == 0.0


def test_pseudo_label_roundtrip_via_dir(tmp_path, pools):
    src, tgt, val = pools
    cfg = tiny_cfg(iters=3, n_labeled=1, seed=4)
    split = train.build_split(cfg, src, tgt)
    params = network.init_params(cfg.model, 0)
    pseudo = train.generate_pseudo_labels(cfg.model, params, split.unlabeled_target)
    train.save_pseudo_labels(tmp_path / "p", pseudo)
    loaded = train.load_pseudo_labels(tmp_path / "p", split.unlabeled_target, 5)
    assert set(loaded) == set(pseudo)
    for k in pseudo:
        assert np.array_equal(loaded[k], pseudo[k])


def test_load_pseudo_labels_missing_file(tmp_path, pools):
    src, tgt, _ = pools
    split = train.build_split(tiny_cfg(n_labeled=0, seed=0), src, tgt)
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError):
        train.load_pseudo_labels(tmp_path / "empty", split.unlabeled_target, 5)


def test_metrics_csv_schema(tmp_path, pools):
    src, tgt, val = pools
    cfg = tiny_cfg(iters=2, n_labeled=1, seed=6, val_every=1)
    out = tmp_path / "m"
    train.run_two_phase(cfg, src, tgt, val, out_dir=out, variant="base")
    lines = (out / "metrics_phase1.csv").read_text().strip().splitlines()
    assert lines[0] == "iter,lr,L_sup_s,L_sup_l,L_ent,L_self,L_cont_gt,L_cont_pseudo,total,val_miou"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) == cfg.base_lr
    assert first[-1] != ""  # val_every=1 validates every step
