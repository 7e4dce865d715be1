"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic    b"CPAECKPT"
    version  u32
    config   u32 length + UTF-8 flat key-value text
    meta     u32 length + UTF-8 JSON (iteration, rng state, bookkeeping)
    count    u32 number of tensor records
    record   u32 name length, name, u32 rank, rank x u64 extents,
             prod(extents) x f64 values
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig

MAGIC = b"CPAECKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    tensors: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def iteration(self) -> int:
        return int(self.meta.get("iteration", 0))


def _blob(text: str) -> bytes:
    raw = text.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps(ckpt: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION), _blob(ckpt.config.dumps()),
             _blob(json.dumps(ckpt.meta, sort_keys=True)), struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        key = name.encode("utf-8")
        parts.append(struct.pack("<I", len(key)) + key)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> Checkpoint:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    def take_bytes(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        out = data[pos : pos + n]
        pos += n
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    config = RunConfig.loads(take_bytes(take("<I")[0]).decode("utf-8"))
    meta = json.loads(take_bytes(take("<I")[0]).decode("utf-8"))
    (count,) = take("<I")
    tensors = {}
    for _ in range(count):
        name = take_bytes(take("<I")[0]).decode("utf-8")
        (rank,) = take("<I")
        shape = take(f"<{rank}Q") if rank else ()
        n = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(take_bytes(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise CheckpointError("trailing bytes after last tensor record")
    return Checkpoint(config, tensors, meta)


def save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(ckpt))
    tmp.replace(path)


def load(path) -> Checkpoint:
    return loads(Path(path).read_bytes())
