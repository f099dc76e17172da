"""Binary tensor container (.m4dc) and mask-image loading.

Layout, all little-endian:

    magic   8 bytes  "M4DCONT\\0"
    version u32      currently 1
    count   u32      number of entries
    table   count *  (name_len u16, name utf-8, dtype u8, ndim u8,
                      dims u32 * ndim, offset u64, length u64)
    payload          raw tensor bytes, each entry 8-byte aligned

Offsets are absolute file offsets. Writing the same entries twice yields
byte-identical files; the header layout is fully determined by the entry
list.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"M4DCONT\0"
VERSION = 1

# dtype codes are part of the on-disk contract
_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("uint8"): 2,
    np.dtype("int32"): 3,
    np.dtype("uint16"): 4,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class ContainerError(ValueError):
    """Malformed or inconsistent container data."""


class UnsupportedImageError(ValueError):
    """Image file in a format the loader does not accept."""


@dataclass
class TensorEntry:
    name: str
    data: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ContainerError("entry name must be non-empty")
        if len(self.name.encode()) > 0xFFFF:
            raise ContainerError("entry name too long")
        arr = np.asarray(self.data)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.dtype not in _DTYPE_CODES:
            raise ContainerError(
                f"dtype {arr.dtype} not storable; use one of "
                f"{sorted(str(d) for d in _DTYPE_CODES)}"
            )
        if any(d < 1 for d in arr.shape):
            raise ContainerError(f"entry {self.name!r} has a zero-sized dim {arr.shape}")
        self.data = arr


def _align8(n: int) -> int:
    return (n + 7) & ~7


def write_container(path, entries) -> None:
    """Write entries (iterable of TensorEntry) to path.

    Names must be unique. Arrays are stored little-endian, C-contiguous.
    """
    entries = [e if isinstance(e, TensorEntry) else TensorEntry(*e) for e in entries]
    names = [e.name for e in entries]
    if len(set(names)) != len(names):
        raise ContainerError("duplicate entry names")

    # first pass: header size
    header_len = len(MAGIC) + 4 + 4
    for e in entries:
        header_len += 2 + len(e.name.encode()) + 1 + 1 + 4 * e.data.ndim + 8 + 8

    # second pass: assign payload offsets
    payloads = []
    offset = _align8(header_len)
    for e in entries:
        raw = np.ascontiguousarray(e.data.astype(e.data.dtype.newbyteorder("<"))).tobytes()
        payloads.append((offset, raw))
        offset = _align8(offset + len(raw))

    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(entries))
    for e, (off, raw) in zip(entries, payloads):
        nb = e.name.encode()
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<BB", _DTYPE_CODES[e.data.dtype], e.data.ndim)
        buf += struct.pack(f"<{e.data.ndim}I", *e.data.shape)
        buf += struct.pack("<QQ", off, len(raw))
    for off, raw in payloads:
        buf += b"\0" * (off - len(buf))
        buf += raw

    with open(path, "wb") as f:
        f.write(bytes(buf))


def read_container(path) -> dict[str, np.ndarray]:
    """Read all entries. Validates magic, version, offsets and payload sizes."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise ContainerError(f"{path}: bad magic")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise ContainerError(f"{path}: truncated header")
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (version, count) = take("<II")
    if version != VERSION:
        raise ContainerError(f"{path}: version {version}, expected {VERSION}")

    metas = []
    for _ in range(count):
        (name_len,) = take("<H")
        if pos + name_len > len(blob):
            raise ContainerError(f"{path}: truncated header")
        name = blob[pos : pos + name_len].decode()
        pos += name_len
        code, ndim = take("<BB")
        if code not in _CODE_DTYPES:
            raise ContainerError(f"{path}: unknown dtype code {code} for {name!r}")
        dims = take(f"<{ndim}I")
        if ndim == 0 or any(d < 1 for d in dims):
            raise ContainerError(f"{path}: entry {name!r} has empty dims {dims}")
        off, length = take("<QQ")
        metas.append((name, _CODE_DTYPES[code], dims, off, length))

    header_end = pos
    spans = []
    out: dict[str, np.ndarray] = {}
    for name, dtype, dims, off, length in metas:
        if name in out:
            raise ContainerError(f"{path}: duplicate entry {name!r}")
        expect = int(np.prod(dims)) * dtype.itemsize
        if length != expect:
            raise ContainerError(
                f"{path}: entry {name!r} length {length} != {expect} from dims"
            )
        if off < header_end or off % 8 != 0:
            raise ContainerError(f"{path}: entry {name!r} has bad offset {off}")
        if off + length > len(blob):
            raise ContainerError(f"{path}: truncated payload for {name!r}")
        spans.append((off, off + length, name))
        arr = np.frombuffer(blob, dtype=dtype.newbyteorder("<"), count=int(np.prod(dims)), offset=off)
        out[name] = arr.reshape(dims).astype(dtype)  # native byte order, writable copy
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ContainerError(f"{path}: entries {n0!r} and {n1!r} overlap")
    return out


def save_arrays(path, **arrays) -> None:
    """Convenience wrapper: write named arrays in sorted-name order."""
    write_container(path, [TensorEntry(k, arrays[k]) for k in sorted(arrays)])


def load_arrays(path) -> dict[str, np.ndarray]:
    return read_container(path)


def _read_pgm(blob: bytes, path) -> np.ndarray:
    # binary PGM (P5); comments and arbitrary whitespace in the header
    if blob[:2] in (b"P2", b"P3", b"P6"):
        raise UnsupportedImageError(f"{path}: only binary PGM (P5) is supported")
    if blob[:2] != b"P5":
        raise UnsupportedImageError(f"{path}: not a PGM file")
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise UnsupportedImageError(f"{path}: truncated PGM header")
        c = blob[pos : pos + 1]
        if c == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(blob) and not blob[pos : pos + 1].isspace():
                pos += 1
            fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval > 255:
        raise UnsupportedImageError(f"{path}: 16-bit PGM not supported (maxval {maxval})")
    data = blob[pos : pos + width * height]
    if len(data) != width * height:
        raise UnsupportedImageError(f"{path}: truncated PGM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM wants a 2-d array")
    if img.dtype != np.uint8:
        if img.max(initial=0) > 255 or img.min(initial=0) < 0:
            raise ValueError("PGM values must fit uint8")
        img = img.astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (img.shape[1], img.shape[0]))
        f.write(np.ascontiguousarray(img).tobytes())


def load_mask_image(path) -> np.ndarray:
    """Load an integer label map from a PGM file or a container.

    Containers must hold a 2-d uint8 entry named "mask" (or exactly one
    2-d uint8 entry). Returns int32 labels.
    """
    path = str(path)
    with open(path, "rb") as f:
        head = f.read(8)
    if head == MAGIC:
        data = read_container(path)
        if "mask" in data:
            arr = data["mask"]
        else:
            candidates = [a for a in data.values() if a.dtype == np.uint8 and a.ndim == 2]
            if len(candidates) != 1:
                raise ContainerError(f"{path}: no unambiguous mask entry")
            arr = candidates[0]
        if arr.dtype != np.uint8 or arr.ndim != 2:
            raise ContainerError(f"{path}: mask entry must be 2-d uint8")
        return arr.astype(np.int32)
    with open(path, "rb") as f:
        blob = f.read()
    return _read_pgm(blob, path).astype(np.int32)
