"""Binary checkpoint format for named weight tensors.

Layout (little-endian): magic ``SBMC``, version u16, tensor count u32, then per
tensor: name length u16, UTF-8 name, rank u8, dims u32 each, row-major f32 data.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"SBMC"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


class UnrecognizedCheckpointError(CheckpointFormatError):
    pass


class UnsupportedCheckpointVersion(CheckpointFormatError):
    pass


class TruncatedCheckpointError(CheckpointFormatError):
    pass


def to_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.buf):
            raise TruncatedCheckpointError(f"truncated checkpoint at byte {self.pos}")
        out = self.buf[self.pos : self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def from_bytes(buf: bytes) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise UnrecognizedCheckpointError("unrecognized format: missing SBMC magic")
    r = _Reader(buf)
    r.take(4)
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise UnsupportedCheckpointVersion(f"unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (length,) = r.unpack("<H")
        try:
            name = r.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not UTF-8") from exc
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(dims, dtype=np.int64))
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims)
        out[name] = data.astype(np.float32)
    if r.pos != len(buf):
        raise CheckpointFormatError("trailing bytes after last tensor")
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(to_bytes(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    return from_bytes(Path(path).read_bytes())
