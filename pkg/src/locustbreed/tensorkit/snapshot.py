"""Tensor snapshots: ``uint32 ndim``, ``ndim x uint64`` extents, then little-endian float64 data."""
from __future__ import annotations

import struct

import numpy as np


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr, dtype="<f8", order="C")  # keeps 0-d shapes
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def decode_tensor(buf, offset: int = 0) -> tuple[np.ndarray, int]:
    (ndim,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shape = struct.unpack_from(f"<{ndim}Q", buf, offset)
    offset += 8 * ndim
    count = int(np.prod(shape, dtype=np.int64))
    if offset + 8 * count > len(buf):
        raise ValueError("tensor snapshot truncated")
    arr = np.frombuffer(buf, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
    return arr, offset + 8 * count
