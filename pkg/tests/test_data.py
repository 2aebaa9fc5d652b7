import json
import os

import numpy as np
import pytest

from cuenhance.data import (
    DegradationConfig,
    build_unpaired_split,
    degrade,
    load_image_png,
    load_manifest,
    load_mask_png,
    make_phantom,
    save_image_png,
    save_mask_png,
)


def test_phantom_shape_range_and_mask():
    p = make_phantom(0, 64)
    assert p.image.shape == (1, 64, 64)
    assert p.image.min() >= 0.0 and p.image.max() <= 1.0
    assert p.mask.shape == (64, 64)
    assert set(np.unique(p.mask)) <= {0, 1}
    assert 0 < p.mask.sum() < 64 * 64  # both classes present


def test_phantom_deterministic():
    a, b = make_phantom(0, 64), make_phantom(0, 64)
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.mask, b.mask)


def test_phantom_seeds_differ():
    a, b = make_phantom(0, 64), make_phantom(1, 64)
    frac = np.mean(a.image != b.image)
    assert frac > 0.01


def test_phantom_rejects_bad_size():
    for bad in (8, 15, 48, 100):
        with pytest.raises(ValueError):
            make_phantom(0, bad)


def test_degrade_identity_exact():
    p = make_phantom(3, 64)
    out = degrade(p, DegradationConfig.identity(), seed=7)
    assert np.array_equal(out, p.image)


def test_degrade_blur_preserves_mean():
    p = make_phantom(4, 64)
    cfg = DegradationConfig((1.0, 1.0), (2.0, 2.0), (0.0, 0.0), 0.0)
    out = degrade(p, cfg, seed=0)
    assert abs(out.mean() - p.image.mean()) < 1e-3


def test_degrade_uniform_gain_exact():
    p = make_phantom(5, 64)
    cfg = DegradationConfig((0.5, 0.5), (0.0, 0.0), (0.0, 0.0), 0.0)
    out = degrade(p, cfg, seed=0)
    assert np.array_equal(out, 0.5 * p.image)


def test_degrade_deterministic_and_in_range():
    p = make_phantom(6, 64)
    cfg = DegradationConfig()
    a = degrade(p, cfg, seed=11)
    b = degrade(p, cfg, seed=11)
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0
    c = degrade(p, cfg, seed=12)
    assert not np.array_equal(a, c)


def test_degradation_config_validation():
    with pytest.raises(ValueError):
        DegradationConfig(illumination_gain_range=(0.9, 0.2))
    with pytest.raises(ValueError):
        DegradationConfig(vignette_strength=-1.0)


def test_png_roundtrip(tmp_path):
    p = make_phantom(8, 32)
    img_path = os.path.join(tmp_path, "x.png")
    save_image_png(img_path, p.image)
    back = load_image_png(img_path)
    assert back.shape == (1, 32, 32)
    assert back.min() >= 0.0 and back.max() <= 1.0
    assert np.abs(back - p.image).max() <= 0.5 / 255.0 + 1e-9
    mask_path = os.path.join(tmp_path, "m.png")
    save_mask_png(mask_path, p.mask)
    assert np.array_equal(load_mask_png(mask_path), p.mask)


def test_build_split_counts_disjoint_and_loadable(tmp_path):
    root = str(tmp_path)
    man = build_unpaired_split(3, 4, 32, seed=0, root=root)
    assert len(man.hq_ids) == 3 and len(man.lq_ids) == 4
    assert not set(man.hq_ids) & set(man.lq_ids)
    for sid in man.hq_ids + man.lq_ids:
        img = load_image_png(man.image_path(sid))
        msk = load_mask_png(man.mask_path(sid))
        assert img.shape == (1, 32, 32) and msk.shape == (32, 32)
    again = load_manifest(root, "train")
    assert again.hq_ids == man.hq_ids and again.lq_ids == man.lq_ids


def test_build_split_singleton(tmp_path):
    man = build_unpaired_split(1, 1, 32, seed=1, root=str(tmp_path))
    assert len(man.hq_ids) == 1 and len(man.lq_ids) == 1


def test_build_split_rebuild_identical(tmp_path):
    root = str(tmp_path)
    build_unpaired_split(2, 2, 32, seed=5, root=root)
    with open(os.path.join(root, "manifest.json")) as fh:
        first = fh.read()
    build_unpaired_split(2, 2, 32, seed=5, root=root)
    with open(os.path.join(root, "manifest.json")) as fh:
        second = fh.read()
    assert first == second
    a = load_image_png(os.path.join(root, "train", "lq", "lq_0000.png"))
    build_unpaired_split(2, 2, 32, seed=5, root=root)
    b = load_image_png(os.path.join(root, "train", "lq", "lq_0000.png"))
    assert np.array_equal(a, b)


def test_build_split_two_splits_one_manifest(tmp_path):
    root = str(tmp_path)
    build_unpaired_split(2, 2, 32, seed=5, root=root, split="train")
    build_unpaired_split(1, 1, 32, seed=6, root=root, split="test")
    with open(os.path.join(root, "manifest.json")) as fh:
        doc = json.load(fh)
    assert set(doc["splits"]) == {"train", "test"}
    test_man = load_manifest(root, "test")
    assert len(test_man.hq_ids) == 1
    assert os.path.exists(test_man.image_path(test_man.lq_ids[0]))


def test_lq_images_are_actually_degraded(tmp_path):
    root = str(tmp_path)
    man = build_unpaired_split(4, 4, 64, seed=9, root=root)
    hq = np.stack([load_image_png(man.image_path(s)) for s in man.hq_ids])
    lq = np.stack([load_image_png(man.image_path(s)) for s in man.lq_ids])
    # degradations darken and flatten contrast
    assert lq.mean() < hq.mean()
    assert lq.std() < hq.std()
