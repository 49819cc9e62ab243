"""Dense tensor file (DTF) container.

Layout, all little-endian:

    bytes 0..3   magic b"DTF1"
    byte  4      dtype code (1 = float32)
    byte  5      rank
    bytes 6..11  zero padding
    then rank u64 dims, then the row-major float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DTF1"
DTYPE_F32 = 1


def write_dtf(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim < 1:
        arr = arr.reshape(1)
    header = MAGIC + struct.pack("<BB6x", DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_dtf(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise ValueError(f"not a DTF file: {path}")
    dtype_code, rank = struct.unpack_from("<BB", raw, 4)
    if dtype_code != DTYPE_F32:
        raise ValueError(f"not a DTF file: unknown dtype code {dtype_code}")
    if raw[6:12] != b"\x00" * 6:
        raise ValueError(f"not a DTF file: bad padding in {path}")
    offset = 12
    if len(raw) < offset + 8 * rank:
        raise ValueError(f"not a DTF file: truncated header in {path}")
    dims = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    count = int(np.prod(dims)) if rank else 1
    payload = raw[offset:]
    if len(payload) != 4 * count:
        raise ValueError(f"shape mismatch: {path} declares {dims} but holds {len(payload)} bytes")
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    return arr.astype(np.float32)
