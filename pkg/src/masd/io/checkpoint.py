"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MASDCKPT"                      magic, 8 bytes
    u32 version                      currently 1
    u32 meta_len, meta_len bytes     UTF-8 JSON metadata (task, seed, config)
    u32 n_arrays
    n_arrays x:
        u32 name_len, name bytes     UTF-8
        u32 ndim, ndim x u64 dims
        prod(dims) x f64             IEEE-754 binary64, little-endian, C order
    u32 crc32                        of every byte after the magic up to here
    b"END!"

Saves go to a temporary sibling file that is renamed into place, so a crash
never leaves a torn checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict

import numpy as np

MAGIC = b"MASDCKPT"
TRAILER = b"END!"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    arrays: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)
    version: int = VERSION

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        if self.meta != other.meta or self.version != other.version:
            return False
        if list(self.arrays) != list(other.arrays):
            return False
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.arrays.values(), other.arrays.values()))


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    body = bytearray()
    body += struct.pack("<I", ckpt.version)
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    body += struct.pack("<I", len(meta)) + meta
    body += struct.pack("<I", len(ckpt.arrays))
    for name, arr in ckpt.arrays.items():
        arr = np.require(np.asarray(arr, dtype="<f8"), requirements="C")
        raw = name.encode("utf-8")
        body += struct.pack("<I", len(raw)) + raw
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        body += arr.tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    return MAGIC + bytes(body) + TRAILER


def decode_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if data[-len(TRAILER):] != TRAILER:
        raise CheckpointError("checkpoint is truncated or corrupt (missing trailer)")
    body = data[len(MAGIC):-len(TRAILER)]
    if len(body) < 8:
        raise CheckpointError("checkpoint is truncated")
    payload, (crc,) = body[:-4], struct.unpack("<I", body[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint is corrupt (checksum mismatch)")
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(payload):
            raise CheckpointError("checkpoint is truncated")
        out = payload[pos:pos + n]
        pos += n
        return out

    (version,) = struct.unpack("<I", take(4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = struct.unpack("<I", take(4))
    meta = json.loads(take(meta_len).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if pos != len(payload):
        raise CheckpointError("checkpoint has trailing garbage")
    return Checkpoint(arrays, meta, version)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(encode_checkpoint(ckpt))
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
