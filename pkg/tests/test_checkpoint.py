import json
import struct

import numpy as np
import pytest

from beexformer.accounting import measure_size
from beexformer.checkpoint import MAGIC, checkpoint_meta, load_checkpoint, read_header, save_frozen, save_latent
from beexformer.errors import FormatError
from beexformer.model import BEExformer, FrozenModel

from conftest import tiny_config


@pytest.fixture
def model():
    m = BEExformer(tiny_config(model_dim=70, num_heads=2, slfn_dim=66), seed=4)
    for t in m.fp.values():
        t.data[...] = t.data.astype(np.float32)
    return m


def test_latent_round_trip_is_bit_identical(tmp_path, model):
    path = tmp_path / "latent.ckpt"
    save_latent(model, path, {"note": "x"})
    back = load_checkpoint(path)
    assert isinstance(back, BEExformer)
    for (na, ta), (nb, tb) in zip(model.tensors(), back.tensors()):
        assert na == nb
        np.testing.assert_array_equal(ta.data.astype(np.float32), tb.data)
    save_latent(back, tmp_path / "again.ckpt", {"note": "x"})
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()
    assert checkpoint_meta(path) == {"note": "x"}


def test_frozen_round_trip(tmp_path, model, rng):
    frozen = model.freeze()
    path = tmp_path / "frozen.ckpt"
    save_frozen(frozen, path)
    back = load_checkpoint(path)
    assert isinstance(back, FrozenModel) and back.activations == "b2"
    for name, p in frozen.weights.items():
        np.testing.assert_array_equal(back.weights[name].packed.words, p.packed.words)
    ids = rng.integers(1, 13, size=(3, 6))
    a, b = frozen.forward(ids), back.forward(ids)
    for c in a:
        np.testing.assert_array_equal(a[c].data, b[c].data)
    save_frozen(back, tmp_path / "again.ckpt")
    assert path.read_bytes() == (tmp_path / "again.ckpt").read_bytes()


def test_layout_is_aligned(tmp_path, model):
    path = tmp_path / "f.ckpt"
    save_frozen(model.freeze(), path)
    blob = path.read_bytes()
    assert blob[:8] == MAGIC
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header, start, size = read_header(path)
    assert start % 8 == 0 and start >= 16 + hlen and size == len(blob) and size % 8 == 0
    assert all(e["offset"] % 8 == 0 for e in header["tensors"])
    packed = [e for e in header["tensors"] if e["dtype"] == "packed"]
    assert all(e["pad_bits"] == e["words_per_row"] * 64 - e["shape"][1] for e in packed)


def test_size_ledger_survives_a_round_trip(tmp_path, model):
    first = tmp_path / "a.ckpt"
    save_frozen(model.freeze(), first)
    before = measure_size(first)
    save_frozen(load_checkpoint(first), tmp_path / "b.ckpt")
    after = measure_size(tmp_path / "b.ckpt")
    assert before.to_json() == after.to_json()
    assert before.file_bytes == first.stat().st_size
    assert before.header_bytes + before.payload_bytes <= before.file_bytes
    assert before.num_parameters == model.num_parameters()


def test_latent_ratio_is_one(tmp_path, model):
    save_latent(model, tmp_path / "l.ckpt")
    assert measure_size(tmp_path / "l.ckpt").ratio == 1.0


def corrupt(path, how):
    blob = bytearray(path.read_bytes())
    if how == "magic":
        blob[0:8] = b"NOTACKPT"
    elif how == "truncated":
        blob = blob[:-8]
    elif how == "extended":
        blob += b"\0" * 8
    elif how == "header":
        blob[16] = 0xFF
    elif how == "short":
        blob = blob[:10]
    elif how == "long_header":
        blob[8:16] = struct.pack("<Q", 10 ** 9)
    path.write_bytes(bytes(blob))


@pytest.mark.parametrize("how", ["magic", "truncated", "extended", "header", "short", "long_header"])
def test_corruption_is_detected(tmp_path, model, how):
    path = tmp_path / "c.ckpt"
    save_frozen(model.freeze(), path)
    corrupt(path, how)
    with pytest.raises(FormatError):
        load_checkpoint(path)
    with pytest.raises(FormatError):
        measure_size(path)


def test_unknown_version_and_missing_file(tmp_path, model):
    path = tmp_path / "v.ckpt"
    save_latent(model, path)
    header, start, _ = read_header(path)
    header["format_version"] = 99
    raw = json.dumps(header, sort_keys=True).encode()
    blob = path.read_bytes()
    (hlen,) = struct.unpack("<Q", blob[8:16])
    # keep the payload start unchanged by padding the header with spaces
    raw = raw + b" " * (hlen - len(raw))
    path.write_bytes(blob[:8] + struct.pack("<Q", len(raw)) + raw + blob[16 + hlen:])
    with pytest.raises(FormatError):
        load_checkpoint(path)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "missing.ckpt")


def test_tensor_set_mismatch(tmp_path, model):
    path = tmp_path / "m.ckpt"
    save_latent(model, path)
    header, start, _ = read_header(path)
    header["config"]["num_blocks"] = 3
    blob = path.read_bytes()
    (hlen,) = struct.unpack("<Q", blob[8:16])
    raw = json.dumps(header, sort_keys=True).encode()
    raw = raw + b" " * (hlen - len(raw))
    path.write_bytes(blob[:16] + raw + blob[16 + hlen:])
    with pytest.raises(FormatError):
        load_checkpoint(path)
