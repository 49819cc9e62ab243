"""Binary PPM (P6) and PGM (P5) readers and writers, 8-bit only."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _read_header(raw: bytes, magic: bytes):
    if raw[:2] != magic:
        raise ValueError(f"expected {magic.decode()} image")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    return width, height, pos


def read_ppm(path: str | Path) -> np.ndarray:
    """Returns float64 (H, W, 3) in [0, 1]."""
    raw = Path(path).read_bytes()
    w, h, pos = _read_header(raw, b"P6")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h * 3, offset=pos)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0


def read_pgm(path: str | Path) -> np.ndarray:
    """Returns uint8 (H, W)."""
    raw = Path(path).read_bytes()
    w, h, pos = _read_header(raw, b"P5")
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).copy()


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Writes float [0, 1] or uint8 (H, W, 3)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PPM wants (H, W, 3)")
    u8 = _to_u8(image)
    h, w = u8.shape[:2]
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(u8.tobytes())


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    if image.ndim != 2:
        raise ValueError("PGM wants (H, W)")
    u8 = _to_u8(image)
    h, w = u8.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(u8.tobytes())


def _to_u8(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return np.ascontiguousarray(image)
    return np.ascontiguousarray(
        np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    )
