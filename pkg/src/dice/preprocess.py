"""Image preprocessing: height-240 bilinear resize, channel normalization,
and the wide-image two-tile split with overlap-averaged merge."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scoring import bilinear_grid

TARGET_HEIGHT = 240
TILE = 240

# frozen-backbone channel statistics
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


def resize_bilinear(image: np.ndarray, target_h: int = TARGET_HEIGHT) -> np.ndarray:
    """Aspect-preserving corner-aligned bilinear resize to a target height."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError("image must be 2-d or 3-d")
    if target_h < 1:
        raise ValueError("degenerate target size")
    h, w = img.shape[:2]
    target_w = max(1, int(round(w * target_h / h)))
    return bilinear_grid(img, target_h, target_w)


def normalize_channels(
    image: np.ndarray,
    mean: tuple[float, ...] = CLIP_MEAN,
    std: tuple[float, ...] = CLIP_STD,
) -> np.ndarray:
    """Per-channel (x - mean) / std."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != len(mean) or len(mean) != len(std):
        raise ValueError("image channels must match the statistics")
    std_arr = np.asarray(std, dtype=np.float64)
    if np.any(std_arr <= 0):
        raise ValueError("std must be positive")
    return (img - np.asarray(mean)) / std_arr


@dataclass(frozen=True)
class TilePlan:
    """Horizontal tile offsets over a height-`tile` image."""

    offsets: tuple[int, ...]
    width: int
    height: int
    tile: int = TILE


def tile_split(image: np.ndarray, tile: int = TILE) -> tuple[TilePlan, list[np.ndarray]]:
    """Split a height-`tile` image into square tiles.

    Width up to one tile passes through unsplit; widths up to two tiles get
    tiles anchored at the left and right edges (overlapping in the middle);
    wider images are rejected rather than tiled open-endedly.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if h != tile:
        raise ValueError(f"image height {h} must equal tile size {tile}")
    if w < tile:
        raise ValueError(f"image narrower than tile: {w} < {tile}")
    if w > 2 * tile:
        raise ValueError(f"width {w} exceeds two tiles")
    offsets = (0,) if w == tile else (0, w - tile)
    plan = TilePlan(offsets=offsets, width=w, height=h, tile=tile)
    tiles = [img[:, x : x + tile].copy() for x in offsets]
    return plan, tiles


def tile_merge(maps: list[np.ndarray], plan: TilePlan) -> np.ndarray:
    """Reassemble per-tile maps onto the original width, averaging overlap."""
    if len(maps) != len(plan.offsets):
        raise ValueError("tile count mismatch")
    out = np.zeros((plan.height, plan.width))
    counts = np.zeros((plan.height, plan.width))
    for values, x in zip(maps, plan.offsets):
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (plan.height, plan.tile):
            raise ValueError(f"tile map shape {v.shape} does not match plan")
        out[:, x : x + plan.tile] += v
        counts[:, x : x + plan.tile] += 1.0
    if np.any(counts == 0):
        raise ValueError("tile plan leaves uncovered columns")
    return out / counts
