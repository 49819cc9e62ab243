"""Writer for the DTF tensor container the scoring engine reads.

Layout, all little-endian:

    bytes 0..3   magic b"DTF1"
    byte  4      dtype code (1 = float32)
    byte  5      rank
    bytes 6..11  zero padding
    then rank u64 dims, then the row-major float32 payload.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DTF1"
DTYPE_F32 = 1


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write to a temp file in the same directory, then rename over `path`."""
    dst = Path(path)
    tmp = dst.with_name(f".{dst.name}.tmp-{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, dst)


def dtf_bytes(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim < 1 or arr.ndim > 8:
        raise ValueError(f"DTF rank must be 1..8, got {arr.ndim}")
    header = MAGIC + struct.pack("<BB6x", DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + dims + arr.astype("<f4", copy=False).tobytes()


def write_dtf(path: str | Path, array: np.ndarray) -> None:
    atomic_write_bytes(path, dtf_bytes(array))
