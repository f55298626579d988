import numpy as np
import pytest

from vnsc.errors import FormatError
from vnsc.serialization import MAGIC, load_parameters, save_parameters


@pytest.fixture
def state(rng):
    return {
        "encoder.pre.weight": rng.normal(size=(4, 2, 7)).astype(np.float32),
        "encoder.pre.bias": rng.normal(size=4).astype(np.float32),
        "opt.step": np.float32(17.0),
        "norm.gamma": np.ones(8, dtype=np.float32),
    }


def test_round_trip_is_bit_exact(tmp_path, state):
    path = tmp_path / "model.vnscparm"
    save_parameters(path, state)
    loaded = load_parameters(path)
    assert list(loaded) == list(state)
    for name in state:
        original = np.asarray(state[name], dtype=np.float32)
        assert loaded[name].shape == original.shape
        assert loaded[name].tobytes() == original.tobytes()


def test_scalar_rank_zero_supported(tmp_path):
    path = tmp_path / "s.vnscparm"
    save_parameters(path, {"step": np.float32(3.0)})
    loaded = load_parameters(path)
    assert loaded["step"].shape == ()
    assert float(loaded["step"]) == 3.0


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.vnscparm"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(FormatError, match="magic"):
        load_parameters(path)


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "v.vnscparm"
    path.write_bytes(MAGIC + (99).to_bytes(4, "little") + (0).to_bytes(4, "little"))
    with pytest.raises(FormatError, match="version"):
        load_parameters(path)


def test_truncation_detected(tmp_path, state):
    path = tmp_path / "t.vnscparm"
    save_parameters(path, state)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 5])
    with pytest.raises(FormatError, match="truncated"):
        load_parameters(path)


def test_trailing_garbage_detected(tmp_path, state):
    path = tmp_path / "g.vnscparm"
    save_parameters(path, state)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(FormatError, match="trailing"):
        load_parameters(path)


def test_empty_state(tmp_path):
    path = tmp_path / "e.vnscparm"
    save_parameters(path, {})
    assert load_parameters(path) == {}
