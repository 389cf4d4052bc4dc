import json

import numpy as np
import pytest

from otcalib import checkpoint as ckpt
from otcalib.picnn import PicnnConfig, init_potential
from otcalib.quantile import QrModel


def _pair():
    cfg = PicnnConfig(input_dim=3, hidden_dim_context=4, hidden_dim_convex=5, embed_dims=(6,))
    return init_potential(cfg, 1), init_potential(cfg, 2)


def _save(tmp_path, **meta):
    f, g = _pair()
    path = tmp_path / "c.json"
    ckpt.save_checkpoint(path, f, g, {"source_mode": "uniform", "inference_potential": "f", **meta})
    return path, f, g


def test_roundtrip_bit_exact(tmp_path):
    path, f, g = _save(tmp_path)
    f2, g2, meta = ckpt.load_checkpoint(path)
    for a, b in ((f, f2), (g, g2)):
        assert list(a.params) == list(b.params)
        for k in a.params:
            assert a.params[k].tobytes() == b.params[k].tobytes()
    assert meta["inference_potential"] == "f" and g2.config == g.config


def test_score_table_roundtrip(tmp_path):
    table = np.linspace(0.1, 0.9, 101) ** 1.5
    path, _, _ = _save(tmp_path, source_mode="score", source_table=table)
    model = ckpt.ot_model_from_checkpoint(path)
    assert model.source_mode == "score"
    assert model.source_quantile_table.tobytes() == table.tobytes()


def test_flipped_payload_byte(tmp_path):
    path, _, _ = _save(tmp_path)
    doc = json.loads(path.read_text())
    blob = doc["arrays"]["f"][0]
    data = bytearray(__import__("base64").b64decode(blob["data"]))
    data[3] ^= 0x01
    blob["data"] = __import__("base64").b64encode(bytes(data)).decode()
    path.write_text(json.dumps(doc))
    with pytest.raises(ckpt.CheckpointError, match="digest mismatch"):
        ckpt.load_checkpoint(path)


def test_version_bump(tmp_path):
    path, _, _ = _save(tmp_path)
    doc = json.loads(path.read_text())
    doc["format_version"] = 2
    path.write_text(json.dumps(doc))
    with pytest.raises(ckpt.CheckpointError, match="unsupported checkpoint version"):
        ckpt.load_checkpoint(path)


def test_truncated(tmp_path):
    path, _, _ = _save(tmp_path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ckpt.CheckpointError, match="truncated"):
        ckpt.load_checkpoint(path)


def test_save_is_deterministic(tmp_path):
    a, _, _ = _save(tmp_path)
    first = a.read_bytes()
    b, _, _ = _save(tmp_path)
    assert b.read_bytes() == first


def test_qr_roundtrip_and_kind_checks(tmp_path):
    m = QrModel(np.arange(6.0).reshape(3, 2) / 10, np.array([0.1, 0.2, 0.3]), (0.1, 0.5, 0.9))
    ckpt.save_qr(tmp_path / "q.json", m)
    back = ckpt.load_qr(tmp_path / "q.json")
    assert back.levels == m.levels and np.array_equal(back.weights, m.weights)
    assert isinstance(ckpt.load_model(tmp_path / "q.json"), QrModel)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_checkpoint(tmp_path / "q.json")
    path, _, _ = _save(tmp_path)
    with pytest.raises(ckpt.CheckpointError):
        ckpt.load_qr(path)
