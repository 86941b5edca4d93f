"""Binary checkpoints.

Layout (all little-endian): magic "VXCK", u16 version, u32 parameter count,
then per parameter: u16 name length, UTF-8 name, u8 ndim, ndim x u32 extents,
f32 data in C order.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import ShapeMismatchError
from ..voxelize import atomic_write

CKPT_MAGIC = b"VXCK"
CKPT_VERSION = 1


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    parts = [struct.pack("<4sHI", CKPT_MAGIC, CKPT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw_name = name.encode("utf-8")
        arr = np.asarray(arr)
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes(order="C"))
    atomic_write(path, b"".join(parts))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, count = struct.unpack_from("<4sHI", raw)
    if magic != CKPT_MAGIC:
        raise ShapeMismatchError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise ShapeMismatchError(f"{path}: unsupported checkpoint version {version}")
    offset = struct.calcsize("<4sHI")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
        offset += 4 * size
    return arrays
