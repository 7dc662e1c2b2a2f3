"""Versioned binary container: magic, JSON header, then raw little-endian arrays.

Layout::

    4 bytes   magic
    u32 LE    format version
    u64 LE    header length
    ...       UTF-8 JSON header {"meta": {...}, "arrays": [{"name", "dtype", "shape"}, ...]}
    ...       array buffers in header order, C-contiguous

The encoding is byte-stable: same inputs always give the same file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, magic: bytes, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    specs, blobs = [], []
    for name, a in arrays.items():
        a = np.ascontiguousarray(a)
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta, "arrays": specs}, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def read_container(path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}, expected {magic!r}")
    if len(data) < 16:
        raise ContainerError(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<IQ", data, 4)
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    offset = 16
    try:
        header = json.loads(data[offset : offset + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: corrupt header") from exc
    offset += hlen
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        n = int(np.prod(spec["shape"], dtype=np.int64)) * dtype.itemsize
        if offset + n > len(data):
            raise ContainerError(f"{path}: truncated at byte {offset} reading {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(data, dtype=dtype, count=n // dtype.itemsize, offset=offset).reshape(
            spec["shape"]
        ).copy()
        offset += n
    return header["meta"], arrays
