"""Synthetic benchmark generator, splits, partial annotation, dataset I/O."""

import numpy as np
import pytest

from patchcontrast import data
from patchcontrast.disparity import VOID

SRC, TGT = data.default_styles()


def test_scene_determinism():
    a = data.generate_scene(7, SRC)
    b = data.generate_scene(7, SRC)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.labels, b.labels)
    assert a.scene_id == b.scene_id


def test_style_changes_appearance_not_labels():
    s = data.generate_scene(21, SRC)
    t = data.generate_scene(21, TGT)
    assert np.array_equal(s.labels, t.labels)
    assert np.mean(np.abs(s.image - t.image)) > 0.05
    assert s.domain == "SOURCE" and t.domain == "TARGET"


def test_scene_contracts():
    for seed in range(12):
        sc = data.generate_scene(seed, TGT)
        assert sc.image.shape == (3, 64, 128)
        assert sc.labels.shape == (64, 128)
        assert sc.image.min() >= 0.0 and sc.image.max() <= 1.0
        assert sc.labels.max() < data.N_CLASSES
        assert (sc.labels > 0).any()  # at least one shape survives clipping
        assert sc.labels.dtype == np.uint8


def test_scene_arrays_frozen():
    sc = data.generate_scene(3, SRC)
    with pytest.raises(ValueError):
        sc.image[0, 0, 0] = 0.5
    with pytest.raises(ValueError):
        sc.labels[0, 0] = 1


def test_seed_variety():
    imgs = [data.generate_scene(s, SRC).labels for s in range(5)]
    assert any(not np.array_equal(imgs[0], m) for m in imgs[1:])


def test_partial_annotation_full_fraction_unchanged():
    lab = data.generate_scene(4, SRC).labels
    out = data.partial_annotation(lab, 1.0, seed=0)
    assert np.array_equal(out, lab)


def test_partial_annotation_counting():
    # 120x60 map: 12x6 blocks of 10x10; ceil(0.25*72)=18 kept -> 25% pixels
    rng = np.random.default_rng(0)
    lab = rng.integers(0, 5, size=(120, 60)).astype(np.uint8)
    out = data.partial_annotation(lab, 0.25, seed=3)
    kept = out != VOID
    assert kept.sum() == 18 * 100
    assert np.array_equal(out[kept], lab[kept])  # kept pixels untouched
    assert np.all(out[~kept] == VOID)


def test_partial_annotation_ragged_edges():
    lab = np.ones((64, 128), dtype=np.uint8)  # 7x13 = 91 blocks, edges ragged
    out = data.partial_annotation(lab, 0.5, seed=1)
    assert out.shape == lab.shape
    votes = (out != VOID).sum()
    assert 0 < votes < lab.size


def test_partial_annotation_seed_sensitivity():
    lab = data.generate_scene(5, SRC).labels
    a = data.partial_annotation(lab, 0.25, seed=10)
    b = data.partial_annotation(lab, 0.25, seed=11)
    assert not np.array_equal(a != VOID, b != VOID)
    assert np.array_equal(a, data.partial_annotation(lab, 0.25, seed=10))


def test_partial_annotation_fraction_validated():
    lab = np.zeros((20, 20), dtype=np.uint8)
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError, match="fraction"):
            data.partial_annotation(lab, bad, seed=0)


def test_split_ssda():
    scenes = [data.generate_scene(100 + i, TGT) for i in range(10)]
    labeled, unlabeled, hidden = data.split_ssda(scenes, 3, seed=5)
    assert len(labeled) == 3 and len(unlabeled) == 7
    lab_ids = {s.scene_id for s in labeled}
    unl_ids = {s.scene_id for s in unlabeled}
    assert not lab_ids & unl_ids
    assert set(hidden) == unl_ids
    # determinism
    labeled2, unlabeled2, _ = data.split_ssda(scenes, 3, seed=5)
    assert [s.scene_id for s in labeled] == [s.scene_id for s in labeled2]
    # UDA edge
    l0, u0, h0 = data.split_ssda(scenes, 0, seed=5)
    assert len(l0) == 0 and len(u0) == 10
    with pytest.raises(ValueError, match="out of range"):
        data.split_ssda(scenes, 11, seed=5)


def test_unlabeled_scenes_expose_no_labels():
    scenes = [data.generate_scene(i, TGT) for i in range(4)]
    _, unlabeled, _ = data.split_ssda(scenes, 1, seed=0)
    for u in unlabeled:
        assert not hasattr(u, "labels")
        fields = {f.name for f in u.__dataclass_fields__.values()}
        assert "labels" not in fields


def test_dataset_round_trip(tmp_path):
    scenes = [data.generate_scene(i, SRC) for i in range(4)]
    img_dir, lab_dir = data.save_dataset(scenes, tmp_path)
    loaded = data.load_dataset(img_dir, lab_dir, domain="SOURCE")
    assert [s.scene_id for s in loaded] == sorted(s.scene_id for s in scenes)
    by_id = {s.scene_id: s for s in scenes}
    for s in loaded:
        orig = by_id[s.scene_id]
        assert np.array_equal(s.labels, orig.labels)
        assert np.max(np.abs(s.image - orig.image)) <= 0.5 / 255 + 1e-9
        assert s.domain == "SOURCE"


def test_load_dataset_errors(tmp_path):
    scenes = [data.generate_scene(i, SRC) for i in range(2)]
    img_dir, lab_dir = data.save_dataset(scenes, tmp_path)

    import os
    from PIL import Image

    # unpaired entry
    extra = os.path.join(img_dir, "zzz_extra.png")
    Image.fromarray(np.zeros((64, 128, 3), dtype=np.uint8)).save(extra)
    with pytest.raises(ValueError, match="unpaired"):
        data.load_dataset(img_dir, lab_dir, domain="SOURCE")
    os.remove(extra)

    # out-of-range label value, error names file and pixel
    stem = scenes[0].scene_id
    bad = np.asarray(Image.open(os.path.join(lab_dir, stem + ".png"))).copy()
    bad[7, 9] = 200
    Image.fromarray(bad, mode="L").save(os.path.join(lab_dir, stem + ".png"))
    with pytest.raises(ValueError, match=r"200 at pixel \(7,9\)"):
        data.load_dataset(img_dir, lab_dir, domain="SOURCE")


def test_make_benchmark_roles_disjoint():
    src, tgt, val = data.make_benchmark(4, 3, 2, seed=1)
    assert len(src) == 4 and len(tgt) == 3 and len(val) == 2
    assert all(s.domain == "SOURCE" for s in src)
    assert all(t.domain == "TARGET" for t in tgt + val)
    ids = [s.scene_id for s in src + tgt + val]
    assert len(set(ids)) == len(ids)
    # different benchmark seed -> different scenes
    src2, _, _ = data.make_benchmark(4, 3, 2, seed=2)
    assert not np.array_equal(src[0].labels, src2[0].labels) or not np.array_equal(
        src[0].image, src2[0].image
    )


def test_labels_to_color():
    lab = np.array([[0, 1], [4, VOID]], dtype=np.uint8)
    rgb = data.labels_to_color(lab)
    assert rgb.shape == (2, 2, 3)
    assert tuple(rgb[1, 1]) == (255, 255, 255)
