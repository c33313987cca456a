import struct

import numpy as np
import pytest

from deepmark.checkpoint import (MAGIC, Checkpoint, CheckpointError, from_bytes, load_checkpoint,
                                 save_checkpoint, to_bytes)
from deepmark.nets import WatermarkingModel
from deepmark.optim import AdamState, adam_step


@pytest.fixture(scope="module")
def model():
    return WatermarkingModel.create(11)


def test_round_trip_byte_identical(model, tmp_path):
    save_checkpoint(tmp_path / "a.dmrk", Checkpoint(model, step=3))
    loaded = load_checkpoint(tmp_path / "a.dmrk")
    save_checkpoint(tmp_path / "b.dmrk", loaded)
    assert (tmp_path / "a.dmrk").read_bytes() == (tmp_path / "b.dmrk").read_bytes()
    assert loaded.step == 3 and loaded.adam is None
    for k, p in model.params.items():
        assert loaded.model.params[k].data.tobytes() == p.data.tobytes()


def test_header_layout(model):
    raw = to_bytes(Checkpoint(model))
    assert raw[:4] == MAGIC
    version, n, inv = struct.unpack("<III", raw[4:16])
    assert (version, n, inv) == (1, 12, 1)
    assert struct.unpack("<6I", raw[16:40]) == (128, 128, 3, 32, 32, 1)


def test_adam_state_round_trip(model):
    m = model.copy()
    for p in m.params.values():
        p.grad = np.full_like(p.data, 0.5)
    st = AdamState(lr=3e-4)
    adam_step(m.params, st)
    back = from_bytes(to_bytes(Checkpoint(m, step=1, adam=st)))
    assert back.adam.step == 1 and back.adam.lr == 3e-4
    for k in m.params:
        np.testing.assert_array_equal(back.adam.m[k], st.m[k])
        np.testing.assert_array_equal(back.adam.v[k], st.v[k])


def test_no_tau_variant_round_trip():
    m = WatermarkingModel.create(2, use_invariance=False)
    back = from_bytes(to_bytes(Checkpoint(m)))
    assert not back.model.use_invariance
    assert "invariance.w" not in back.model.params


@pytest.mark.parametrize("cut", [0, 3, 10, 60, -1])
def test_truncation_rejected(model, cut):
    raw = to_bytes(Checkpoint(model))
    with pytest.raises(CheckpointError, match="truncated"):
        from_bytes(raw[:cut] if cut >= 0 else raw[:-1])


def test_bad_magic_version_and_trailing(model):
    raw = to_bytes(Checkpoint(model))
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(raw + b"\0")


def test_shape_mismatch_rejected(model):
    raw = bytearray(to_bytes(Checkpoint(model)))
    # Redundancy header says 12; claim 13 so every invariance tensor mismatches.
    raw[8:12] = struct.pack("<I", 13)
    with pytest.raises(CheckpointError, match="architecture"):
        from_bytes(bytes(raw))


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.dmrk"):
        load_checkpoint(tmp_path / "nope.dmrk")
