"""Reader and writer for the .m4dc tensor container.

Deliberately a twin of the optimizer's own implementation so the two
packages share files without sharing code. Layout, little-endian:
magic "M4DCONT\\0", version u32, count u32, then per entry a table row
(name_len u16, name, dtype u8, ndim u8, dims u32*ndim, offset u64,
length u64) and 8-byte-aligned raw payloads at absolute offsets.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"M4DCONT\0"
VERSION = 1

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("uint8"): 2,
    np.dtype("int32"): 3,
    np.dtype("uint16"): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _align8(n: int) -> int:
    return (n + 7) & ~7


def write_container(path, entries) -> None:
    """entries: iterable of (name, array). Same bytes for same input."""
    items = []
    for name, data in entries:
        arr = np.asarray(data)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.dtype not in _DTYPE_CODES:
            raise ValueError(f"dtype {arr.dtype} not storable")
        items.append((name, arr))

    header_len = len(MAGIC) + 8
    for name, arr in items:
        header_len += 2 + len(name.encode()) + 2 + 4 * arr.ndim + 16

    offset = _align8(header_len)
    payloads = []
    for name, arr in items:
        raw = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"))).tobytes()
        payloads.append((offset, raw))
        offset = _align8(offset + len(raw))

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(items))
    for (name, arr), (off, raw) in zip(items, payloads):
        nb = name.encode()
        buf += struct.pack("<H", len(nb)) + nb
        buf += struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim)
        buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
        buf += struct.pack("<QQ", off, len(raw))
    for off, raw in payloads:
        buf += b"\0" * (off - len(buf))
        buf += raw
    with open(path, "wb") as f:
        f.write(bytes(buf))


def read_container(path) -> dict:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    pos = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, pos)
    pos += 8
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + nlen].decode()
        pos += nlen
        code, ndim = struct.unpack_from("<BB", blob, pos)
        pos += 2
        dims = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        off, length = struct.unpack_from("<QQ", blob, pos)
        pos += 16
        if code not in _CODE_DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        if off + length > len(blob):
            raise ValueError(f"{path}: truncated payload for {name!r}")
        dt = _CODE_DTYPES[code]
        out[name] = np.frombuffer(
            blob, dtype=dt.newbyteorder("<"), count=length // dt.itemsize,
            offset=off).reshape(dims).astype(dt)
    return out
