"""Named-tensor checkpoint container.

Layout (little-endian)::

    b"LGCK" | version:u32 | count:u32 |
    count x ( name_len:u16 | name:utf-8 | rank:u8 | extents:u32[rank] | data:f32[prod] )
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"LGCK"
VERSION = 1


def write_checkpoint(path, tensors) -> None:
    """Write an ordered mapping of name -> array-like (stored as float32)."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f4")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise CheckpointError(f"entry {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError("bad magic", path)
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported version {version}", path)
        off = 12
        out = OrderedDict()
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if off + 4 * size > len(buf):
                raise CheckpointError(f"truncated data for {name!r}", path)
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
            off += 4 * size
    except struct.error as exc:
        raise CheckpointError(f"truncated file ({exc})", path) from None
    if off != len(buf):
        raise CheckpointError("trailing bytes after last entry", path)
    return out
