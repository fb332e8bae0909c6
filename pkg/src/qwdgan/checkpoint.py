"""Binary checkpoint format.

Layout (little-endian):
    magic   4s   = b"QWDG"
    version u32  = 1
    meta_len u32, meta JSON (canonical: sorted keys, compact separators)
    count   u32
    entries, sorted by name:
        name_len u16, name utf-8, rank u8, dims u32*rank, payload f64

The canonical meta encoding plus name-sorted entries make save -> load ->
save produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .ioutil import atomic_write_bytes

MAGIC = b"QWDG"
VERSION = 1


@dataclass
class CheckpointData:
    meta: dict
    tensors: dict[str, np.ndarray]

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))


def encode_checkpoint(meta: dict, tensors: dict[str, np.ndarray]) -> bytes:
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION),
             struct.pack("<I", len(meta_blob)), meta_blob,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.tobytes())
    return b"".join(parts)


def save_checkpoint(path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(meta, tensors))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.blob):
            raise DataError(f"truncated checkpoint {self.path}: "
                            f"needed {count} bytes at offset {self.offset}")
        piece = self.blob[self.offset:self.offset + count]
        self.offset += count
        return piece

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(blob: bytes, path="<memory>") -> CheckpointData:
    r = _Reader(blob, path)
    if r.take(4) != MAGIC:
        raise DataError(f"{path} is not a QWDG checkpoint (bad magic bytes)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path} "
                        f"(this build reads version {VERSION})")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt checkpoint metadata in {path}: {exc}") from exc
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        n_elem = 1
        for d in dims:
            n_elem *= d
        payload = r.take(8 * n_elem)
        tensors[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    if r.offset != len(blob):
        raise DataError(f"trailing garbage in checkpoint {path}")
    return CheckpointData(meta=meta, tensors=tensors)


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint file not found: {path}")
    return decode_checkpoint(path.read_bytes(), path)
