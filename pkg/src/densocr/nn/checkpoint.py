"""Flat binary container for named arrays.

Layout (all integers little-endian)::

    magic      8 bytes   b"DOCRCKPT"
    version    u32       currently 1
    itemsize   u8        4 (float32) or 8 (float64)
    reserved   3 bytes   zero
    meta_len   u32       length of the UTF-8 JSON metadata that follows
    meta       meta_len bytes
    count      u32       number of entries
    entries    count x { name_len u16, name, ndim u8, dims u32[ndim], payload }

Payloads are raw little-endian IEEE floats of the header's item size, in
row-major order. Entries are written in sorted name order so that a
load/save cycle reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from densocr.errors import FormatError

MAGIC = b"DOCRCKPT"
VERSION = 1
_ITEMSIZE_DTYPE = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def encode_checkpoint(arrays: dict[str, np.ndarray], metadata: dict | None = None, precision=None) -> bytes:
    if precision is None:
        itemsize = max((np.asarray(a).dtype.itemsize for a in arrays.values()), default=4)
        itemsize = 8 if itemsize >= 8 else 4
    else:
        itemsize = np.dtype(precision).itemsize
    if itemsize not in _ITEMSIZE_DTYPE:
        raise ValueError(f"unsupported checkpoint precision {precision!r}")
    dt = _ITEMSIZE_DTYPE[itemsize]
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IB3x", VERSION, itemsize), struct.pack("<I", len(meta)), meta,
             struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=dt)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"checkpoint truncated at offset {self.pos} while reading {what}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(data: bytes):
    """Return ``(arrays, metadata, dtype)``."""
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, itemsize = r.unpack("<IB3x", "header")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if itemsize not in _ITEMSIZE_DTYPE:
        raise FormatError(f"unsupported item size {itemsize}")
    dt = _ITEMSIZE_DTYPE[itemsize]
    (meta_len,) = r.unpack("<I", "metadata length")
    try:
        metadata = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint metadata: {exc}") from None
    (count,) = r.unpack("<I", "entry count")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"rank of {name}")
        shape = r.unpack(f"<{ndim}I", f"shape of {name}")
        n = int(np.prod(shape, dtype=np.int64))
        payload = r.take(n * itemsize, f"payload of {name}")
        arrays[name] = np.frombuffer(payload, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last checkpoint entry")
    return arrays, metadata, dt.newbyteorder("=").type


def save_checkpoint(path, arrays: dict[str, np.ndarray], metadata: dict | None = None, precision=None) -> None:
    Path(path).write_bytes(encode_checkpoint(arrays, metadata, precision))


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())
