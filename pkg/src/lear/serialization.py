"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"LEAR"
    u32  format version (currently 1)
    u32  metadata length, then that many bytes of UTF-8 JSON
    repeated until EOF:
        u32  name length, UTF-8 name
        u32  rank
        u64  dims[rank]
        f64  values[prod(dims)], row-major

The metadata block carries what is needed to rebuild a model (vocabulary,
categories, annotations, architecture); it is serialized with sorted keys
so identical models produce identical bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"LEAR"
VERSION = 1


def dumps(params: dict[str, np.ndarray], metadata: dict | None = None) -> bytes:
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(meta)), meta]
    for name, values in params.items():
        arr = np.asarray(values, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    return b"".join(chunks)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:4] != MAGIC:
        raise ValidationError("not a LEAR checkpoint (bad magic bytes)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise ValidationError("truncated checkpoint")
        out = struct.unpack_from(fmt, blob, pos)
        pos += size
        return out

    (version,) = take("<I")
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    (meta_len,) = take("<I")
    metadata = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    params: dict[str, np.ndarray] = {}
    while pos < len(blob):
        (name_len,) = take("<I")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = take("<I")
        dims = tuple(take(f"<{rank}Q")) if rank else ()
        count = int(np.prod(dims, dtype=np.int64))
        if pos + 8 * count > len(blob):
            raise ValidationError(f"truncated values for parameter {name!r}")
        params[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * count
    return params, metadata


def save(path, params: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    Path(path).write_bytes(dumps(params, metadata))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
