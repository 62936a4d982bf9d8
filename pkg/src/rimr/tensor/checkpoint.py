"""RIMRCKPT binary checkpoint codec.

Layout (little-endian): magic ``RIMRCKPT``, version u16, entry count u32, then
per entry: name length u16, UTF-8 name, rank u8, rank x u32 extents, and
float32 data, moment1, moment2 in row-major order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autograd import Parameter

MAGIC = b"RIMRCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class CheckpointEntry:
    name: str
    data: np.ndarray
    moment1: np.ndarray
    moment2: np.ndarray


def encode_checkpoint(entries: Iterable[CheckpointEntry]) -> bytes:
    entries = list(entries)
    parts = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for e in entries:
        name = e.name.encode("utf-8")
        shape = e.data.shape
        parts.append(struct.pack("<H", len(name)))
        parts.append(name)
        parts.append(struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        for arr in (e.data, e.moment1, e.moment2):
            if arr.shape != shape:
                raise CheckpointError(f"{e.name}: moment shape {arr.shape} != data shape {shape}")
            parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise CheckpointError(
                f"truncated checkpoint reading {what} at offset {self.pos}: "
                f"expected length >= {end}, actual {len(self.buf)}")
        chunk = self.buf[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(buf: bytes) -> list[CheckpointEntry]:
    r = _Reader(buf)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r} at offset 0")
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} at offset {len(MAGIC)}")
    (count,) = r.unpack("<I", "entry count")
    entries = []
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        try:
            name = r.take(nlen, "name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError(f"invalid UTF-8 name near offset {r.pos}") from exc
        (rank,) = r.unpack("<B", "rank")
        shape = r.unpack(f"<{rank}I", "extents")
        size = int(np.prod(shape, dtype=np.int64))
        arrays = []
        for what in ("data", "moment1", "moment2"):
            raw = r.take(4 * size, f"{name} {what}")
            arrays.append(np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape))
        entries.append(CheckpointEntry(name, *arrays))
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return entries


def entries_from_params(params: Sequence[Parameter]) -> list[CheckpointEntry]:
    return [CheckpointEntry(p.name, p.data, p.moment1, p.moment2) for p in params]


def save_checkpoint(path, params: Sequence[Parameter], extra: dict[str, float] | None = None) -> None:
    """Write parameters plus optional scalar metadata (stored as rank-0 entries named ``@key``)."""
    entries = entries_from_params(params)
    for key, value in (extra or {}).items():
        zero = np.zeros((), dtype=np.float32)
        entries.append(CheckpointEntry(f"@{key}", np.asarray(value, dtype=np.float32), zero, zero))
    Path(path).write_bytes(encode_checkpoint(entries))


def load_checkpoint(path, params: Sequence[Parameter]) -> dict[str, float]:
    """Restore values and moments into ``params`` by name; returns the ``@`` metadata."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    entries = decode_checkpoint(path.read_bytes())
    by_name = {e.name: e for e in entries}
    extra = {e.name[1:]: float(e.data) for e in entries if e.name.startswith("@")}
    for p in params:
        e = by_name.get(p.name)
        if e is None:
            raise CheckpointError(f"{path}: missing parameter {p.name!r}")
        if e.data.shape != p.data.shape:
            raise CheckpointError(f"{path}: {p.name!r} has shape {e.data.shape}, expected {p.data.shape}")
        p.data[...] = e.data
        p.moment1[...] = e.moment1
        p.moment2[...] = e.moment2
    expected = {p.name for p in params}
    unknown = [n for n in by_name if not n.startswith("@") and n not in expected]
    if unknown:
        raise CheckpointError(f"{path}: unexpected parameters {unknown[:5]}")
    return extra
