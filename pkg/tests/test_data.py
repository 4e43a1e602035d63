import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from wecdg import data
from wecdg.errors import CorruptFile, EmptyDataset, ImageTooSmall, IoError, UnknownLabel


def test_manifest_round_trip(tmp_path):
    m = data.synth_dataset(tmp_path / "ds", 2, seed=3, size=16)
    back = data.read_manifest(tmp_path / "ds" / "manifest.json")
    assert back.to_dict() == m.to_dict()
    assert back.root == tmp_path / "ds"
    assert [e.exposure_label for e in back.entries] == ["under", "GT", "over"] * 2
    assert [e.descriptor_label for e in back.entries[:3]] == ["underexposed", "well-exposed", "overexposed"]
    assert len(back.filter(["under", "over"])) == 4


def test_manifest_errors(tmp_path):
    with pytest.raises(IoError):
        data.read_manifest(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CorruptFile):
        data.read_manifest(bad)
    bad.write_text('{"entries": [{"input_path": "a.png"}]}')
    with pytest.raises(CorruptFile):
        data.read_manifest(bad)
    bad.write_text('{"entries": [{"input_path": "a.png", "gt_path": "b.png", "exposure_label": "GT"}]}')
    with pytest.raises(IoError):
        data.read_manifest(bad)
    assert len(data.read_manifest(bad, check_paths=False)) == 1
    with pytest.raises(UnknownLabel):
        data.ManifestEntry("a", "b", "dark")
    with pytest.raises(EmptyDataset):
        data.DatasetManifest([]).load_pairs()


def test_synth_is_deterministic_and_ordered(tmp_path):
    data.synth_dataset(tmp_path / "a", 3, seed=5, size=16)
    data.synth_dataset(tmp_path / "b", 3, seed=5, size=16)
    data.synth_dataset(tmp_path / "c", 3, seed=6, size=16)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert len(files) == 10
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a/gt/0000.png").read_bytes() != (tmp_path / "c/gt/0000.png").read_bytes()
    inputs, gts = data.read_manifest(tmp_path / "a/manifest.json").load_pairs()
    for i in range(0, 9, 3):
        assert inputs[i].pixels.mean() < gts[i].pixels.mean() < inputs[i + 2].pixels.mean()
        assert inputs[i + 1] is gts[i]


def test_degrade_follows_gamma_gain(rng):
    gt = rng.uniform(size=(4, 4, 3))
    np.testing.assert_allclose(data.degrade(gt, 2.0, 0.5), 0.5 * gt ** 2, rtol=1e-15)
    assert data.degrade(gt, 0.3, 1.6).max() <= 1.0


def test_synth_parameter_ranges():
    for i in range(20):
        _, _, _, p = data.synth_triple(np.random.default_rng([0, i]), 16)
        assert 1.8 <= p["under_gamma"] <= 3.0 and 0.5 <= p["under_gain"] <= 0.9
        assert 0.3 <= p["over_gamma"] <= 0.6 and 1.1 <= p["over_gain"] <= 1.6


def test_dihedral_group(rng):
    x = rng.standard_normal((5, 5, 2))
    assert np.array_equal(data.apply_dihedral(x, 0, False), x)
    y = x
    for _ in range(4):
        y = data.apply_dihedral(y, 1, False)
    assert np.array_equal(y, x)
    images = []
    for k, flip in itertools.product(range(4), (False, True)):
        t = data.apply_dihedral(x, k, flip)
        assert np.array_equal(data.invert_dihedral(t, k, flip), x)
        images.append(t.tobytes())
    assert len(set(images)) == 8


def test_grid_positions():
    assert data.grid_positions(64, 64, 32) == [0]
    assert data.grid_positions(100, 64, 16) == [0, 16, 32]
    with pytest.raises(ImageTooSmall):
        data.grid_positions(40, 64, 32)


def test_crop_and_augment_keeps_alignment(rng):
    img = rng.uniform(size=(40, 48, 3))
    gt = img ** 2
    cfg = SimpleNamespace(crop_size=16, stride=8, hflip=True)
    for _ in range(20):
        a, b = data.crop_and_augment(img, gt, cfg, rng)
        assert a.shape == (16, 16, 3)
        np.testing.assert_array_equal(b, a ** 2)
    with pytest.raises(ImageTooSmall):
        data.crop_and_augment(img[:8], gt[:8], cfg, rng)


def test_sample_transform_without_flip(rng):
    flips = {data.sample_transform((64, 64), 32, 16, rng, hflip=False).flip for _ in range(30)}
    assert flips == {False}
