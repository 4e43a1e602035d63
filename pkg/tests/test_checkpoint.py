import json
import struct

import numpy as np
import pytest

from wecdg import checkpoint as ck
from wecdg.errors import CorruptFile, IoError, UnsupportedFormat
from wecdg.model import WECDG, ModelConfig
from wecdg.sdgm import SDGMConfig

TINY = ModelConfig(base_channels=4, unet_levels=1, edrm_count=1, descriptor_dim=8, seed=3)


@pytest.fixture
def model():
    return WECDG(TINY, SDGMConfig(dim=8, seed=5))


def test_layout_prefix_and_header(model):
    blob = ck.encode_checkpoint(model, {"steps": 1})
    magic, version, hlen = struct.unpack_from("<8sIQ", blob)
    assert magic == b"WECDGCKP" and version == 1
    header = json.loads(blob[20:20 + hlen])
    assert header["seed"] == 3 and header["train_config"] == {"steps": 1}
    assert header["model_config"] == TINY.to_dict()
    entries = header["entries"]
    assert entries[-1]["name"] == "sdgm_table"
    total = sum(8 * e["count"] for e in entries)
    assert len(blob) == 20 + hlen + total
    offsets = [e["offset"] for e in entries]
    assert offsets == sorted(offsets) and offsets[0] == 0


def test_round_trip_restores_every_array(model, tmp_path, rng):
    for _, t in model.tree.items():
        t.data = rng.standard_normal(t.shape)
    ck.save_checkpoint(model, tmp_path / "m.ckpt")
    loaded, header = ck.load_checkpoint(tmp_path / "m.ckpt")
    assert header["format_version"] == 1
    for name, t in model.tree.items():
        assert np.array_equal(loaded.tree[name].data, t.data)
    for name, t in model.sdgm.tree.items():
        assert np.array_equal(loaded.sdgm.tree[name].data, t.data)
    assert np.array_equal(loaded.sdgm.table, model.sdgm.table)
    img = rng.uniform(size=(12, 10, 3))
    assert np.array_equal(loaded.correct_manual(img, "overexposed").pixels,
                          model.correct_manual(img, "overexposed").pixels)
    ck.save_checkpoint(loaded, tmp_path / "again.ckpt")
    assert (tmp_path / "again.ckpt").read_bytes() == (tmp_path / "m.ckpt").read_bytes()


def test_encoding_is_deterministic():
    a = ck.encode_checkpoint(WECDG(TINY, SDGMConfig(dim=8)))
    b = ck.encode_checkpoint(WECDG(TINY, SDGMConfig(dim=8)))
    assert a == b


def test_f32_model_round_trip(tmp_path):
    cfg = ModelConfig.from_dict({**TINY.to_dict(), "precision": "f32"})
    m = WECDG(cfg, SDGMConfig(dim=8))
    ck.save_checkpoint(m, tmp_path / "f.ckpt")
    loaded, _ = ck.load_checkpoint(tmp_path / "f.ckpt")
    assert loaded.tree["stem.w"].dtype == np.float32
    assert np.array_equal(loaded.tree["stem.w"].data, m.tree["stem.w"].data)


def test_errors(model, tmp_path):
    blob = ck.encode_checkpoint(model)
    with pytest.raises(IoError):
        ck.read_checkpoint(tmp_path / "nothing.ckpt")
    cases = {
        "short": (blob[:10], CorruptFile),
        "magic": (b"XXXXXXXX" + blob[8:], CorruptFile),
        "version": (blob[:8] + struct.pack("<I", 9) + blob[12:], UnsupportedFormat),
        "header": (blob[:8] + struct.pack("<IQ", 1, 10 ** 9) + blob[20:], CorruptFile),
        "data": (blob[:-16], CorruptFile),
    }
    for name, (raw, err) in cases.items():
        p = tmp_path / f"{name}.ckpt"
        p.write_bytes(raw)
        with pytest.raises(err):
            ck.read_checkpoint(p)
