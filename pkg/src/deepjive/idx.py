"""Reader/writer for the IDX binary format used by the MNIST files.

Header: two zero bytes, a dtype code, a dimension count, then that many
big-endian uint32 extents, then row-major data.  Plain and gzip-
compressed files are both accepted; compression is detected from the
file's leading bytes, not its name.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_CODES = {np.dtype(np.uint8): 0x08, np.dtype(np.int8): 0x09}


class IdxError(ValueError):
    """File does not parse as IDX; message carries the byte offset."""


def read_idx(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    if len(raw) < 4:
        raise IdxError(f"{path}: truncated at byte 0, no magic header")
    zero0, zero1, code, ndim = raw[0], raw[1], raw[2], raw[3]
    if zero0 != 0 or zero1 != 0:
        raise IdxError(f"{path}: bad magic at byte 0 ({raw[:4]!r})")
    if code not in _DTYPES:
        raise IdxError(f"{path}: unknown dtype code 0x{code:02x} at byte 2")
    if len(raw) < 4 + 4 * ndim:
        raise IdxError(f"{path}: truncated at byte {len(raw)}, "
                       f"expected {ndim} dimension fields")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    dtype = _DTYPES[code]
    offset = 4 + 4 * ndim
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    expected = offset + count * dtype.itemsize
    if len(raw) < expected:
        raise IdxError(f"{path}: truncated at byte {len(raw)}, "
                       f"expected {expected} bytes for shape {dims}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray):
    array = np.asarray(array)
    if array.dtype not in _CODES:
        raise IdxError(f"unsupported dtype {array.dtype} for IDX write")
    header = bytes([0, 0, _CODES[array.dtype], array.ndim])
    header += struct.pack(f">{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array).tobytes())
