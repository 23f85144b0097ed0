"""Self-describing binary checkpoint container.

Layout (all integers little-endian)::

    b"EDGEPOPCKPT\\0"  magic
    u32               format version
    u64 + bytes       metadata, UTF-8 JSON with sorted keys
    u32               entry count
    per entry:        u16 name length, name, u8 dtype length, dtype string,
                      u8 ndim, ndim x u64 shape, u64 byte count, raw bytes

Entries are written in sorted name order, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from edgepop.errors import FormatError

MAGIC = b"EDGEPOPCKPT\0"
VERSION = 1


def dumps(arrays: dict[str, np.ndarray], metadata: dict) -> bytes:
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(meta)), meta, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        dtype = arr.dtype.str.encode("ascii")
        raw = arr.tobytes()
        key = name.encode("utf-8")
        parts += [
            struct.pack("<H", len(key)),
            key,
            struct.pack("<B", len(dtype)),
            dtype,
            struct.pack("<B", arr.ndim),
            struct.pack(f"<{arr.ndim}Q", *arr.shape),
            struct.pack("<Q", len(raw)),
            raw,
        ]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError("not an edgepop checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = r.unpack("<Q")
    try:
        metadata = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from exc
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8", errors="strict")
        (dt_len,) = r.unpack("<B")
        try:
            dtype = np.dtype(r.take(dt_len).decode("ascii"))
        except (TypeError, UnicodeDecodeError) as exc:
            raise FormatError(f"entry {name!r}: bad dtype") from exc
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        (nbytes,) = r.unpack("<Q")
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise FormatError(f"entry {name!r}: {nbytes} bytes for shape {shape} {dtype}")
        arrays[name] = np.frombuffer(r.take(nbytes), dtype=dtype).reshape(shape).copy()
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last entry")
    return arrays, metadata


def save(path: str | Path, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    Path(path).write_bytes(dumps(arrays, metadata))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return loads(buf)
