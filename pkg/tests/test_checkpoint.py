"""Checkpoint format: round trips, byte identity, malformed input."""

import struct

import numpy as np
import pytest

from mvcr import checkpoint as ck
from mvcr import training
from mvcr.model import EncoderConfig, EncoderModel


def sample_params(dtype=np.float64):
    rs = np.random.RandomState(0)
    return {
        "b.weight": rs.randn(3, 4).astype(dtype),
        "a.bias": rs.randn(5).astype(dtype),
        "c.scalarish": rs.randn(1).astype(dtype),
    }


def test_round_trip_exact_values(tmp_path):
    p = tmp_path / "m.ckpt"
    params = sample_params()
    ck.save_checkpoint(p, params, seed=7, config_text="train.seed = 7\n")
    loaded = ck.load_checkpoint(p)
    assert loaded.version == 1
    assert loaded.seed == 7
    assert loaded.config_text == "train.seed = 7\n"
    assert loaded.dtype == np.dtype("<f8")
    assert sorted(loaded.params) == sorted(params)
    for k in params:
        np.testing.assert_array_equal(loaded.params[k], params[k])
        assert loaded.params[k].shape == params[k].shape


def test_save_load_save_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    ck.save_checkpoint(a, sample_params(), seed=3, config_text="x = 1\n")
    loaded = ck.load_checkpoint(a)
    ck.save_checkpoint(b, loaded.params, loaded.seed, loaded.config_text)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_both_element_types_round_trip(tmp_path, dtype):
    p = tmp_path / "m.ckpt"
    params = sample_params(dtype)
    ck.save_checkpoint(p, params, seed=0)
    loaded = ck.load_checkpoint(p)
    assert loaded.params["a.bias"].dtype == np.dtype(dtype).newbyteorder("<")
    np.testing.assert_array_equal(loaded.params["a.bias"], params["a.bias"])


def test_names_stored_lexicographically(tmp_path):
    p = tmp_path / "m.ckpt"
    ck.save_checkpoint(p, sample_params(), seed=0)
    raw = p.read_bytes()
    assert raw.index(b"a.bias") < raw.index(b"b.weight") \
        < raw.index(b"c.scalarish")


def test_save_rejects_bad_inputs(tmp_path):
    p = tmp_path / "m.ckpt"
    with pytest.raises(ValueError):
        ck.save_checkpoint(p, {}, seed=0)
    mixed = {"a": np.zeros(2, np.float32), "b": np.zeros(2, np.float64)}
    with pytest.raises(ValueError):
        ck.save_checkpoint(p, mixed, seed=0)
    with pytest.raises(ValueError):
        ck.save_checkpoint(p, {"a": np.zeros(2, np.int64)}, seed=0)
    with pytest.raises(ValueError):
        ck.save_checkpoint(p, {"a": np.zeros(2, np.float32)}, seed=-1)


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "junk.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 40)
    with pytest.raises(ValueError, match="magic"):
        ck.load_checkpoint(p)


def test_load_rejects_truncation(tmp_path):
    p = tmp_path / "m.ckpt"
    ck.save_checkpoint(p, sample_params(), seed=0)
    whole = p.read_bytes()
    for cut in (4, 15, len(whole) - 3):
        p.write_bytes(whole[:cut])
        with pytest.raises(ValueError, match="truncated|magic"):
            ck.load_checkpoint(p)


def test_load_rejects_trailing_garbage(tmp_path):
    p = tmp_path / "m.ckpt"
    ck.save_checkpoint(p, sample_params(), seed=0)
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(ValueError, match="trailing"):
        ck.load_checkpoint(p)


def test_load_rejects_unknown_version_and_tag(tmp_path):
    p = tmp_path / "m.ckpt"
    ck.save_checkpoint(p, sample_params(), seed=0)
    raw = bytearray(p.read_bytes())
    bumped = bytearray(raw)
    bumped[8:12] = struct.pack("<I", 99)
    p.write_bytes(bytes(bumped))
    with pytest.raises(ValueError, match="version"):
        ck.load_checkpoint(p)
    bad_tag = bytearray(raw)
    bad_tag[12] = 9
    p.write_bytes(bytes(bad_tag))
    with pytest.raises(ValueError, match="tag"):
        ck.load_checkpoint(p)


def test_load_rejects_out_of_order_names(tmp_path):
    p = tmp_path / "m.ckpt"
    body = struct.pack("<I", 2)
    for name in (b"zz", b"aa"):  # wrong order on purpose
        body += struct.pack("<H", len(name)) + name
        body += struct.pack("<B", 1) + struct.pack("<1I", 2)
        body += np.zeros(2, "<f8").tobytes()
    head = ck.MAGIC + struct.pack("<IBQ", 1, 2, 0) + struct.pack("<I", 0)
    p.write_bytes(head + body)
    with pytest.raises(ValueError, match="order"):
        ck.load_checkpoint(p)


def test_model_state_survives_checkpoint(tmp_path):
    cfg = EncoderConfig(num_layers=2, hidden_dim=8, n_heads=2, ffn_dim=16,
                        vocab_size=32, max_seq_len=8)
    model = EncoderModel.create(cfg, None, seed=4, dtype=np.float32)
    p = tmp_path / "model.ckpt"
    ck.save_model(p, model, seed=4, config_text="model.layers = 2\n")
    loaded = ck.load_checkpoint(p)
    twin = EncoderModel.create(cfg, None, seed=999, dtype=np.float32)
    training.load_state(twin, dict(loaded.params))
    for k, v in model.named_params().items():
        np.testing.assert_array_equal(twin.named_params()[k].data, v.data)
