"""ParameterVector: arithmetic, flattening, and exact checkpoint round-trips."""

import json

import numpy as np
import pytest

from metaqf.params import CheckpointError, ParameterVector


def _pv(seed=0):
    rng = np.random.default_rng(seed)
    return ParameterVector({"w": rng.normal(size=(3, 2)), "b": rng.normal(size=2)})


def test_arithmetic():
    a, b = _pv(1), _pv(2)
    s = a + b
    d = a - b
    assert np.allclose(s["w"], a["w"] + b["w"])
    assert np.allclose(d["b"], a["b"] - b["b"])
    assert np.allclose((a * 2.0)["w"], 2.0 * a["w"])
    assert np.array_equal(a.zeros_like()["w"], np.zeros((3, 2)))


def test_incompatible_layouts_raise():
    a = _pv()
    b = ParameterVector({"w": np.zeros((3, 2))})
    with pytest.raises(ValueError):
        _ = a + b


def test_flat_round_trip():
    a = _pv(3)
    flat = a.to_flat()
    assert flat.shape == (a.total_length,) == (8,)
    back = a.from_flat(flat)
    assert back.equal(a)
    with pytest.raises(ValueError):
        a.from_flat(np.zeros(5))


def test_variables_round_trip():
    a = _pv(4)
    vs = a.to_variables()
    assert all(v.requires_grad for v in vs.values())
    assert ParameterVector.from_variables(vs).equal(a)


def test_mean():
    a = ParameterVector({"w": np.asarray([0.2])})
    b = ParameterVector({"w": np.asarray([0.4])})
    assert ParameterVector.mean([a, b])["w"][0] == pytest.approx(0.3, abs=1e-15)
    vecs = [_pv(s) for s in range(4)]
    m = ParameterVector.mean(vecs)
    oracle = sum(v["w"] for v in vecs) / 4.0
    assert np.allclose(m["w"], oracle, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        ParameterVector.mean([])


def test_checkpoint_round_trip_is_exact(tmp_path):
    a = _pv(5)
    path = tmp_path / "ckpt.json"
    a.save(path, config={"k": 1})
    loaded, cfg = ParameterVector.load(path)
    assert loaded.equal(a)          # bit-exact via float.hex
    assert cfg == {"k": 1}
    assert loaded.names == a.names  # segment order preserved


def test_checkpoint_errors(tmp_path):
    missing = tmp_path / "nope.json"
    with pytest.raises(CheckpointError):
        ParameterVector.load(missing)
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(CheckpointError):
        ParameterVector.load(bad)
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"format_version": 99, "segments": {}}))
    with pytest.raises(CheckpointError):
        ParameterVector.load(wrong)
