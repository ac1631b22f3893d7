"""Binary tensor checkpoints.

Layout: magic ``b"SMP1"``, a little-endian uint32 tensor count, then per
tensor: uint32 name length, UTF-8 name, uint32 rank, rank x uint64 dims and
the raw little-endian float64 values in C order.
"""
from __future__ import annotations

import struct
from typing import Mapping

import numpy as np

from ..errors import ParseError

MAGIC = b"SMP1"


def dumps(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:4] != MAGIC:
        raise ParseError("not an SMP1 checkpoint")
    try:
        (count,) = struct.unpack_from("<I", data, 4)
        off = 8
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", data, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            size = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(dims)
            off += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise ParseError(f"truncated checkpoint: {exc}") from None
    if off != len(data):
        raise ParseError("trailing bytes after last tensor")
    return out


def save(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(tensors))


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return loads(fh.read())
