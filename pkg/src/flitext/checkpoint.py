"""Flat binary checkpoint format.

Layout: 8-byte magic "FLITCKPT", version u32, tensor count u32, then per
tensor: name length u32 + UTF-8 name, rank u32, one u32 per dim, raw
little-endian float32 values (row-major). All integers little-endian.
"""
from __future__ import annotations

import struct

import numpy as np

from .autodiff import Tensor
from .errors import DataError

MAGIC = b"FLITCKPT"
VERSION = 1


def save_checkpoint(path, params) -> None:
    """Write a name->Tensor store; values are stored as float32."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data, dtype="<f4")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict:
    """Read back a store as name -> float32 ndarray (insertion-ordered)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    off = 8
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(dims)
        off += 4 * size
        out[name] = arr.copy()
    if off != len(blob):
        raise DataError(f"{path}: trailing bytes after {count} tensors")
    return out


def params_from_arrays(arrays) -> dict:
    """Turn loaded arrays into trainable Tensors (cast to the active dtype)."""
    return {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
