"""Binary tensor format: round trips and the documented layout."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from addlab.serialize import MAGIC, file_hash, load_tensors, save_tensors


def test_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "w": rng.normal(size=(3, 4)),
        "b": rng.normal(size=(4,)),
        "scalarish": np.array([1e-300]),
    }
    path = tmp_path / "t.bin"
    save_tensors(path, tensors)
    loaded = load_tensors(path)
    assert list(loaded) == list(tensors)
    for name in tensors:
        assert np.array_equal(loaded[name], tensors[name])
        assert loaded[name].dtype == np.float64


def test_layout_matches_documentation(tmp_path):
    path = tmp_path / "t.bin"
    arr = np.array([[1.5, -2.5]])
    save_tensors(path, {"ab": arr})
    raw = path.read_bytes()
    assert raw[:8] == MAGIC == b"ADDLAB01"
    pos = 8
    (name_len,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    assert name_len == 2
    assert raw[pos : pos + 2] == b"ab"
    pos += 2
    (rank,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    assert rank == 2
    dims = struct.unpack_from("<2Q", raw, pos)
    pos += 16
    assert dims == (1, 2)
    values = struct.unpack_from("<2d", raw, pos)
    assert values == (1.5, -2.5)
    assert pos + 16 == len(raw)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        load_tensors(path)


def test_same_content_same_bytes(tmp_path):
    tensors = {"x": np.arange(6.0).reshape(2, 3)}
    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    save_tensors(p1, tensors)
    save_tensors(p2, tensors)
    assert p1.read_bytes() == p2.read_bytes()
    assert file_hash(p1) == file_hash(p2)


@settings(max_examples=25, deadline=None)
@given(
    names=st.lists(st.text(min_size=1, max_size=10), min_size=1, max_size=4, unique=True),
    seed=st.integers(0, 2**20),
)
def test_round_trip_property(names, seed):
    import tempfile
    from pathlib import Path

    rng = np.random.default_rng(seed)
    tensors = {}
    for name in names:
        rank = rng.integers(0, 3)
        shape = tuple(rng.integers(1, 5, size=rank))
        tensors[name] = rng.normal(size=shape)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "prop.bin"
        save_tensors(path, tensors)
        loaded = load_tensors(path)
    assert list(loaded) == list(tensors)
    for name in tensors:
        assert np.array_equal(loaded[name], np.asarray(tensors[name], dtype=np.float64))
