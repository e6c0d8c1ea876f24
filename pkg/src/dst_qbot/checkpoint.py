"""Binary parameter checkpoints.

Layout (all integers little-endian uint32)::

    b"DSTCKPT1" | count | count * (name_len | utf-8 name | rows | cols | rows*cols float32)
"""
from __future__ import annotations

import io
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DSTCKPT1"


class CheckpointError(ValueError):
    pass


def dumps(named_arrays) -> bytes:
    items = list(named_arrays.items()) if isinstance(named_arrays, dict) else list(named_arrays)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(items)))
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.ndim != 2:
            raise CheckpointError(f"parameter {name!r} is not 2-D: {arr.shape}")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<II", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:8] != MAGIC:
        raise CheckpointError("bad magic bytes: not a DSTCKPT1 checkpoint")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise CheckpointError("truncated checkpoint")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("garbled parameter name") from exc
        rows, cols = struct.unpack("<II", take(8))
        values = np.frombuffer(take(4 * rows * cols), dtype="<f4").reshape(rows, cols)
        out[name] = values.astype(np.float32)
    if pos != len(blob):
        raise CheckpointError("trailing bytes after last record")
    return out


def save(path, named_arrays) -> None:
    Path(path).write_bytes(dumps(named_arrays))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
