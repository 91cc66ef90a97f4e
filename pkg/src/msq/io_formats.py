"""Bit-exact binary formats for tensors and named parameter sets.

MSQT tensor file, all integers little-endian:

    magic  "MSQT"
    u32    version (1)
    u32    dtype code (0 = f32, 1 = f64)
    u32    ndim
    u64[ndim] extents
    payload: row-major elements, little-endian

MSQC checkpoint file:

    magic  "MSQC"
    u32    entry count
    repeated: u16 name length, UTF-8 name, embedded MSQT file

Both round-trip byte-for-byte.
"""

from __future__ import annotations

import struct

import numpy as np

MSQT_MAGIC = b"MSQT"
MSQC_MAGIC = b"MSQC"
MSQT_VERSION = 1

_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    """Malformed file; ``code`` distinguishes the failure kind."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def msqt_write(t: np.ndarray) -> bytes:
    dt = np.dtype(t.dtype).newbyteorder("<")
    if dt not in _DTYPE_CODES:
        raise FormatError("bad_dtype", f"unsupported dtype {t.dtype}")
    head = MSQT_MAGIC + struct.pack("<III", MSQT_VERSION, _DTYPE_CODES[dt], t.ndim)
    head += struct.pack(f"<{t.ndim}Q", *t.shape)
    return head + np.ascontiguousarray(t, dtype=dt).tobytes()


def _msqt_parse(buf: bytes, offset: int = 0):
    """Parse one embedded MSQT record; returns (tensor, next_offset)."""
    if len(buf) - offset < 16:
        raise FormatError("truncated", "file shorter than the fixed header")
    if buf[offset:offset + 4] != MSQT_MAGIC:
        raise FormatError("bad_magic", f"bad magic {buf[offset:offset + 4]!r}")
    version, code, ndim = struct.unpack_from("<III", buf, offset + 4)
    if version != MSQT_VERSION:
        raise FormatError("bad_version", f"unsupported version {version}")
    if code not in _CODE_DTYPES:
        raise FormatError("bad_dtype", f"unknown dtype code {code}")
    if ndim < 1:
        raise FormatError("bad_shape", "ndim must be >= 1")
    pos = offset + 16
    if len(buf) - pos < 8 * ndim:
        raise FormatError("truncated", "file ends inside the extent list")
    shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
    pos += 8 * ndim
    if any(s < 1 for s in shape):
        raise FormatError("bad_shape", f"zero extent in {shape}")
    dt = _CODE_DTYPES[code]
    nbytes = int(np.prod(shape)) * dt.itemsize
    if len(buf) - pos < nbytes:
        raise FormatError("truncated",
                          f"payload needs {nbytes} bytes, {len(buf) - pos} left")
    arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dt).reshape(shape).copy()
    return arr, pos + nbytes


def msqt_read(buf: bytes) -> np.ndarray:
    arr, end = _msqt_parse(buf)
    if end != len(buf):
        raise FormatError("trailing_bytes", f"{len(buf) - end} bytes after payload")
    return arr


def checkpoint_save(params: dict) -> bytes:
    names = list(params)
    if len(set(names)) != len(names):
        raise FormatError("duplicate_name", "duplicate parameter names")
    out = [MSQC_MAGIC, struct.pack("<I", len(names))]
    for name in names:
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise FormatError("bad_name", f"name too long: {name[:32]}...")
        out.append(struct.pack("<H", len(nb)))
        out.append(nb)
        out.append(msqt_write(params[name]))
    return b"".join(out)


def checkpoint_load(buf: bytes) -> dict:
    if len(buf) < 8:
        raise FormatError("truncated", "file shorter than the checkpoint header")
    if buf[:4] != MSQC_MAGIC:
        raise FormatError("bad_magic", f"bad magic {buf[:4]!r}")
    (count,) = struct.unpack_from("<I", buf, 4)
    pos = 8
    params = {}
    for _ in range(count):
        if len(buf) - pos < 2:
            raise FormatError("truncated", "file ends inside a name header")
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        if len(buf) - pos < nlen:
            raise FormatError("truncated", "file ends inside a name")
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        if name in params:
            raise FormatError("duplicate_name", f"duplicate entry {name!r}")
        params[name], pos = _msqt_parse(buf, pos)
    if pos != len(buf):
        raise FormatError("trailing_bytes", f"{len(buf) - pos} bytes after last entry")
    return params
