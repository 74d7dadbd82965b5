"""Named-tensor container files used for checkpoints.

Layout (all integers little-endian)::

    magic      b"NTC\\x00"
    version    u32
    meta_len   u32, followed by meta_len bytes of UTF-8 JSON metadata
    count      u32
    count x record:
        name_len u32, name (UTF-8)
        dtype    u8   (1 = float64, 2 = float32, 3 = int64)
        ndim     u32, then ndim x u64 dims
        payload  product(dims) elements, little-endian
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParseError, VersionError

MAGIC = b"NTC\x00"
FORMAT_VERSION = 1

_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<f4"), 3: np.dtype("<i8")}
_TAGS = {np.dtype(np.float64): 1, np.dtype(np.float32): 2, np.dtype(np.int64): 3}


def dumps(tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        tag = _TAGS.get(arr.dtype)
        if tag is None:
            raise TypeError(f"tensor {name!r}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BI", tag, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    view = memoryview(blob)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ParseError(f"container truncated at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ParseError("not a named-tensor container (bad magic)")
    version, meta_len = struct.unpack("<II", take(8))
    if version != FORMAT_VERSION:
        raise VersionError(f"container format version {version}, expected {FORMAT_VERSION}")
    metadata = json.loads(bytes(take(meta_len)).decode("utf-8"))
    (count,) = struct.unpack("<I", take(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        tag, ndim = struct.unpack("<BI", take(5))
        if tag not in _DTYPES:
            raise ParseError(f"tensor {name!r}: unknown dtype tag {tag}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dt = _DTYPES[tag]
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(bytes(take(n * dt.itemsize)), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if pos != len(view):
        raise ParseError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors, metadata


def save(path, tensors: Mapping[str, np.ndarray], metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(tensors, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
