"""Versioned binary checkpoint of (name, shape, values) triples.

Layout, all integers little-endian::

    b"CTXMCKPT"            8-byte magic
    u16 version            currently 1
    u32 entry count
    per entry, in insertion order:
        u16 name length, UTF-8 name bytes
        u8 ndim, ndim x u32 dims
        prod(dims) x float64 values, row-major

Round trips are bit-exact; nothing time- or host-dependent is written, so
identical parameters give identical files.
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"CTXMCKPT"
VERSION = 1


def dumps(state: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(state)))
    for name, value in state.items():
        arr = np.ascontiguousarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    return buf.getvalue()


def loads(data: bytes) -> "OrderedDict[str, np.ndarray]":
    if data[:8] != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    version, count = struct.unpack_from("<HI", data, 8)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 14
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        out[name] = arr.astype(np.float64)
    if pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return out


def save(path, state: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path) -> "OrderedDict[str, np.ndarray]":
    return loads(Path(path).read_bytes())
