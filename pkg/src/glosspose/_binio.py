"""Shared binary container: magic + version + JSON metadata + named arrays.

Layout (all integers little-endian):

    magic        4 bytes
    version      uint32
    meta_len     uint64, followed by meta_len bytes of UTF-8 JSON
    n_arrays     uint32
    per array:
        name_len uint16, name bytes (UTF-8)
        dtype    uint8 (0 = float64, 1 = int32)
        ndim     uint8, dims as uint32 each
        payload  raw row-major bytes

Writes are deterministic (arrays sorted by name) so identical inputs give
identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i4")}
_CODES = {"float64": 0, "int32": 1}


def write_container(path, magic: bytes, version: int, meta: dict, arrays: dict):
    buf = bytearray()
    buf += magic
    buf += struct.pack("<I", version)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf += struct.pack("<Q", len(meta_bytes))
    buf += meta_bytes
    buf += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = _CODES.get(arr.dtype.name)
        if code is None:
            raise ValueError(f"unsupported dtype {arr.dtype} for array {name!r}")
        name_bytes = name.encode("utf-8")
        buf += struct.pack("<H", len(name_bytes))
        buf += name_bytes
        buf += struct.pack("<BB", code, arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
        buf += arr.astype(_DTYPES[code], copy=False).tobytes()
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.path}: truncated file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals[0] if len(vals) == 1 else vals


def read_container(path, magic: bytes, version: int):
    """Return (meta, arrays); raises ValueError with a versioned message on
    a missing, foreign, or truncated file."""
    p = Path(path)
    if not p.exists():
        raise ValueError(f"{path}: no such file")
    r = _Reader(p.read_bytes(), path)
    got_magic = r.take(4)
    if got_magic != magic:
        raise ValueError(
            f"{path}: bad magic {got_magic!r}, expected {magic!r} version {version}")
    got_version = r.unpack("<I")
    if got_version != version:
        raise ValueError(
            f"{path}: format version {got_version}, this build reads version {version}")
    meta_len = r.unpack("<Q")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    n_arrays = r.unpack("<I")
    arrays = {}
    for _ in range(n_arrays):
        name_len = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code} (version {version})")
        shape = tuple(r.unpack("<I") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        dt = _DTYPES[code]
        raw = r.take(count * dt.itemsize)
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    return meta, arrays
