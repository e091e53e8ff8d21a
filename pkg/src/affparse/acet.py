"""ACET binary tensor files.

Layout: magic ``ACET``, u32 version=1, u32 rank, rank u32 extents, then a
little-endian float32 payload of exactly prod(extents) values. Write/read
round trips are bit-exact.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"ACET"
VERSION = 1


def write_acet(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_acet(path) -> np.ndarray:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, rank = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    extents = struct.unpack_from(f"<{rank}I", blob, 12)
    count = int(np.prod(extents, dtype=np.int64)) if rank else 1
    payload = blob[12 + 4 * rank:]
    if len(payload) != 4 * count:
        raise DataError(f"{path}: payload holds {len(payload) // 4} floats, header says {count}")
    data = np.frombuffer(payload, dtype="<f4").reshape(extents)
    return data.astype(np.float32, copy=True)
