from __future__ import annotations

import json
import struct

import numpy as np
import pytest

from uniskel.checkpoint import MAGIC, load_arrays, save_arrays
from uniskel.errors import CorruptCheckpoint, VersionError


def _arrays():
    return {
        "a": np.arange(6, dtype=np.float64).reshape(2, 3),
        "b": np.array([1.5, -2.25], dtype=np.float32),
        "empty": np.zeros((0, 4)),
    }


def test_roundtrip(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, "demo", {"k": 1}, _arrays())
    meta, arrays = load_arrays(path, "demo")
    assert meta == {"k": 1}
    for name, arr in _arrays().items():
        assert arrays[name].dtype == arr.dtype
        assert np.array_equal(arrays[name], arr)


def test_layout_is_magic_length_header_payload(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, "demo", {}, {"a": np.array([1.0, 2.0])})
    data = path.read_bytes()
    assert data[:8] == MAGIC
    (h_len,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16: 16 + h_len])
    assert header["arrays"] == [{"name": "a", "dtype": "<f8", "shape": [2]}]
    assert np.frombuffer(data[16 + h_len:], dtype="<f8").tolist() == [1.0, 2.0]


def test_saving_twice_is_byte_identical(tmp_path):
    save_arrays(tmp_path / "1", "demo", {"x": [1, 2]}, _arrays())
    save_arrays(tmp_path / "2", "demo", {"x": [1, 2]}, _arrays())
    assert (tmp_path / "1").read_bytes() == (tmp_path / "2").read_bytes()


@pytest.mark.parametrize("cut", [4, 12, 40, -3])
def test_truncation_detected(tmp_path, cut):
    path = tmp_path / "ck.bin"
    save_arrays(path, "demo", {}, _arrays())
    data = path.read_bytes()
    path.write_bytes(data[:cut])
    with pytest.raises(CorruptCheckpoint):
        load_arrays(path, "demo")


def test_trailing_bytes_detected(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, "demo", {}, _arrays())
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CorruptCheckpoint):
        load_arrays(path, "demo")


def test_wrong_kind_and_magic(tmp_path):
    path = tmp_path / "ck.bin"
    save_arrays(path, "demo", {}, _arrays())
    with pytest.raises(CorruptCheckpoint):
        load_arrays(path, "other")
    path.write_bytes(b"NOTMAGIC" + path.read_bytes()[8:])
    with pytest.raises(CorruptCheckpoint):
        load_arrays(path, "demo")


def test_version_mismatch(tmp_path):
    header = json.dumps({"format_version": 99, "kind": "demo", "meta": {}, "arrays": []}).encode()
    path = tmp_path / "ck.bin"
    path.write_bytes(MAGIC + struct.pack("<Q", len(header)) + header)
    with pytest.raises(VersionError):
        load_arrays(path, "demo")
