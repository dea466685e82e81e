"""Flat binary tensor serialization.

Layout: magic "ADDLAB01", then per-tensor records:
name length (u64 LE), UTF-8 name, rank (u64 LE), dims (u64 LE each),
values (f64 LE, row-major). Record order is preserved round-trip.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"ADDLAB01"

__all__ = ["save_tensors", "load_tensors", "file_hash", "write_manifest", "read_manifest"]


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype=np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<Q", len(nb)))
            f.write(nb)
            f.write(struct.pack("<Q", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(np.ascontiguousarray(arr).astype("<f8").tobytes(order="C"))


def load_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic, not an ADDLAB01 tensor file")
    out: dict[str, np.ndarray] = {}
    pos = len(MAGIC)
    while pos < len(data):
        (name_len,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        dims = struct.unpack_from(f"<{rank}Q", data, pos) if rank else ()
        pos += 8 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(dims)
        pos += 8 * count
        out[name] = arr.astype(np.float64)  # copy out of the read-only buffer
    return out


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
