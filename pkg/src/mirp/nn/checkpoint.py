"""Versioned binary container for named float64 tensors.

Layout (little-endian): b"MIRP", u32 version, u32 hash length + config hash
(ASCII), u32 metadata length + metadata (UTF-8 JSON), u32 tensor count, then
per tensor: u32 name length + name (UTF-8), u32 ndim, u64 per dim, float64
values in C order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MIRP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict, config_hash: str = "", meta: dict | None = None) -> bytes:
    out = [MAGIC, struct.pack("<I", VERSION)]
    h = config_hash.encode("ascii")
    out += [struct.pack("<I", len(h)), h]
    m = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    out += [struct.pack("<I", len(m)), m, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        nb = name.encode("utf-8")
        out += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
        out += [struct.pack("<Q", d) for d in arr.shape]
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]


def loads(buf: bytes):
    """Returns (tensors, config_hash, meta)."""
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config_hash = r.take(r.u32()).decode("ascii")
    meta = json.loads(r.take(r.u32()).decode("utf-8"))
    tensors = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u64() for _ in range(r.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors, config_hash, meta


def save(path, tensors, config_hash="", meta=None):
    Path(path).write_bytes(dumps(tensors, config_hash, meta))


def load(path):
    return loads(Path(path).read_bytes())
