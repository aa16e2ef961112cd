"""Binary checkpoint container shared by the regressor and the transformer.

Layout::

    b"UNISKEL\\x00"            8-byte magic
    uint64 little-endian       header length H
    H bytes                    UTF-8 JSON header
    payload                    raw little-endian arrays, row-major, in header order

The header records the format version, the checkpoint kind, free-form
metadata and, for every array, its name, dtype and shape.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptCheckpoint, VersionError

MAGIC = b"UNISKEL\x00"
FORMAT_VERSION = 1


def save_arrays(path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    payload = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        arr = arr.astype(dtype, copy=False)
        entries.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        payload.append(arr.tobytes(order="C"))
    header = {"format_version": FORMAT_VERSION, "kind": kind, "meta": meta, "arrays": entries}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for chunk in payload:
            fh.write(chunk)


def load_arrays(path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint file")
    (h_len,) = struct.unpack("<Q", data[len(MAGIC): len(MAGIC) + 8])
    start = len(MAGIC) + 8
    if start + h_len > len(data):
        raise CorruptCheckpoint(f"{path}: header truncated")
    try:
        header = json.loads(data[start: start + h_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise VersionError(f"{path}: format version {header.get('format_version')}, expected {FORMAT_VERSION}")
    if header.get("kind") != kind:
        raise CorruptCheckpoint(f"{path}: holds a {header.get('kind')!r} checkpoint, expected {kind!r}")
    offset = start + h_len
    arrays = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise CorruptCheckpoint(f"{path}: payload truncated at array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CorruptCheckpoint(f"{path}: {len(data) - offset} unexpected trailing bytes")
    return header["meta"], arrays
