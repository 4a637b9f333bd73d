"""Self-describing binary container for arrays plus JSON metadata.

Layout: 4-byte magic, uint32 format version, uint64 header length, UTF-8
JSON header, then the raw array blobs.  The header lists array names and
shapes in blob order and carries an arbitrary ``meta`` dict.  Blobs are
C-order float64, little-endian, so a file round-trips bit-identically on
any host.  Checkpoints, datasets, ground-truth sidecars and latent dumps
all reuse this one format and differ only in their metadata.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DJIV"
VERSION = 1


class ContainerError(ValueError):
    """File does not parse as a container of the supported version."""


def save_container(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    entries = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.astype("<f8", copy=False).tobytes())
    header = json.dumps({"arrays": entries, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_container(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic, not a container file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise ContainerError(f"{path}: truncated header ({hlen} bytes declared)")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: header is not valid JSON: {exc}") from exc
    arrays: dict[str, np.ndarray] = {}
    offset = 16 + hlen
    for entry in header["arrays"]:
        shape = tuple(int(s) for s in entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + nbytes > len(raw):
            raise ContainerError(
                f"{path}: truncated at byte {offset}, "
                f"array {entry['name']!r} needs {nbytes} bytes"
            )
        arr = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise ContainerError(f"{path}: {len(raw) - offset} trailing bytes")
    return arrays, header.get("meta", {})
