"""Anomaly scoring: language scores, visual reference scores, fusion.

Language scoring softmaxes the similarity of an embedding against the two
aggregated text tokens at temperature tau. Visual reference scoring measures,
per query patch, the cosine distance to the closest patch of one or more
reference images of the same category. Fusion is a weighted sum of maps at
patch resolution; upsampling to pixel resolution happens after fusion.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from .dtf import write_dtf
from .encoder import ClassToken, PatchTokenGrid
from .prompts import TextTokenPair

RESOLUTIONS = ("patch", "pixel")


@dataclass(frozen=True)
class AnomalyMap:
    """2-d score map tagged with its resolution."""

    values: np.ndarray
    resolution: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("anomaly map must be 2-d")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite anomaly map")
        if self.resolution not in RESOLUTIONS:
            raise ValueError(f"unknown resolution: {self.resolution!r}")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class FusionWeights:
    """Weights for localization (w_visual, w_adapted) and classification
    (w_language, w_visual_max, w_adapted_max) fusion."""

    w_visual: float = 1.0
    w_adapted: float = 1.5
    w_language: float = 1.0
    w_visual_max: float = 1.0
    w_adapted_max: float = 1.0

    def __post_init__(self):
        vals = (
            self.w_visual,
            self.w_adapted,
            self.w_language,
            self.w_visual_max,
            self.w_adapted_max,
        )
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError("fusion weights must be finite and non-negative")
        if self.w_visual == 0 and self.w_adapted == 0:
            raise ValueError("localization fusion weights all zero")
        if self.w_language == 0 and self.w_visual_max == 0 and self.w_adapted_max == 0:
            raise ValueError("classification fusion weights all zero")


def language_score(embedding: ClassToken | np.ndarray, text: TextTokenPair) -> float:
    """Two-class softmax probability of the anomalous text token.

    Computed as a logistic of the similarity gap so extreme temperatures
    saturate to 0/1 instead of overflowing.
    """
    v = embedding.v if isinstance(embedding, ClassToken) else np.asarray(embedding, dtype=np.float64)
    gap = float(v @ text.t_a - v @ text.t_n)
    return float(expit(gap / text.tau))


def language_map(grid: PatchTokenGrid, text: TextTokenPair) -> AnomalyMap:
    """Per-patch language score over a token grid."""
    sims_a = grid.tokens @ text.t_a
    sims_n = grid.tokens @ text.t_n
    return AnomalyMap(expit((sims_a - sims_n) / text.tau), "patch")


def visual_reference_map(query: PatchTokenGrid, references: list[PatchTokenGrid]) -> AnomalyMap:
    """Min cosine distance from each query patch to any reference patch.

    The reference pool is the union of all patch tokens across the given
    reference grids; scores lie in [0, 2].
    """
    if not references:
        raise ValueError("no reference provided")
    pool = np.concatenate([ref.flat() for ref in references], axis=0)
    sims = query.flat() @ pool.T
    best = sims.max(axis=1)
    values = np.clip(1.0 - best, 0.0, 2.0).reshape(query.h, query.w)
    return AnomalyMap(values, "patch")


def joint_map(visual: AnomalyMap, language: AnomalyMap) -> AnomalyMap:
    """Elementwise sum of a visual reference map and a language map."""
    _check_compatible(visual, language)
    return AnomalyMap(visual.values + language.values, visual.resolution)


def fuse_localization(visual: AnomalyMap, adapted: AnomalyMap, weights: FusionWeights) -> AnomalyMap:
    """Weighted sum w_visual * visual + w_adapted * adapted."""
    _check_compatible(visual, adapted)
    return AnomalyMap(
        weights.w_visual * visual.values + weights.w_adapted * adapted.values,
        visual.resolution,
    )


def fuse_classification(
    language: float, visual: AnomalyMap, adapted: AnomalyMap | None, weights: FusionWeights
) -> float:
    """Sample-level score: weighted language score plus map maxima.

    `adapted` is optional so reference-only configurations can drop that term
    together with its weight.
    """
    if visual.values.size == 0:
        raise ValueError("empty anomaly map")
    score = weights.w_language * language + weights.w_visual_max * float(visual.values.max())
    if adapted is not None:
        if adapted.values.size == 0:
            raise ValueError("empty anomaly map")
        score += weights.w_adapted_max * float(adapted.values.max())
    return float(score)


def _check_compatible(a: AnomalyMap, b: AnomalyMap) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.resolution != b.resolution:
        raise ValueError(f"resolution mismatch: {a.resolution} vs {b.resolution}")


def bilinear_grid(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of a 2-d (or 2-d + channel) array.

    Output corners coincide with input corners; interior samples interpolate
    on the (h-1) x (w-1) cell grid. Output values never leave the input's
    [min, max] range, and constant inputs are reproduced exactly.
    """
    v = np.asarray(values, dtype=np.float64)
    h, w = v.shape[:2]
    if out_h < 1 or out_w < 1:
        raise ValueError("degenerate target size")

    ys = np.linspace(0.0, h - 1.0, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0.0, w - 1.0, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.minimum(ys.astype(np.int64), h - 1)
    x0 = np.minimum(xs.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if v.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]

    # a + t*(b - a) keeps constants exact
    top = v[np.ix_(y0, x0)]
    top = top + fx * (v[np.ix_(y0, x1)] - top)
    bot = v[np.ix_(y1, x0)]
    bot = bot + fx * (v[np.ix_(y1, x1)] - bot)
    return top + fy * (bot - top)


def upsample_map(patch_map: AnomalyMap, out_h: int, out_w: int) -> AnomalyMap:
    """Corner-aligned bilinear upsampling of a patch map to pixel resolution."""
    if patch_map.resolution != "patch":
        raise ValueError("upsample_map expects a patch-resolution map")
    h, w = patch_map.shape
    if out_h < h or out_w < w:
        raise ValueError("target size below map size")
    return AnomalyMap(bilinear_grid(patch_map.values, out_h, out_w), "pixel")


def save_map_dtf(anomaly_map: AnomalyMap, path: str | Path) -> None:
    write_dtf(path, anomaly_map.values.astype(np.float32))
