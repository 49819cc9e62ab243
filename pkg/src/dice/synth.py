"""Pseudo-anomaly synthesis: gradient noise, masks, texture blending.

Corrupted training pairs are made by thresholding multi-octave gradient
noise into a mask and alpha-blending a foreign texture into the masked
region. The patch-level mask is the max-pool of the pixel mask, so any
touched patch counts as anomalous.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import prng


@dataclass(frozen=True)
class NoiseField:
    """Multi-octave gradient noise in [-1, 1]."""

    values: np.ndarray
    octaves: int
    seed: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("noise field must be finite and 2-d")
        if v.min() < -1.0 - 1e-9 or v.max() > 1.0 + 1e-9:
            raise ValueError("noise field out of range")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PseudoSample:
    """Corrupted image plus its pixel and patch masks and the blend opacity."""

    image: np.ndarray
    mask_pixel: np.ndarray
    mask_patch: np.ndarray
    opacity: float


# max |value| of single-octave unit-gradient noise; used to rescale into [-1, 1]
_SINGLE_OCTAVE_BOUND = np.sqrt(2.0) / 2.0


def perlin_field(h: int, w: int, base_res: int, octaves: int = 1, seed: int = 0) -> NoiseField:
    """Gradient noise with `octaves` layers.

    Octave o contributes amplitude 0.5**o at lattice resolution
    base_res * 2**o; the sum is rescaled so values stay within [-1, 1] and
    the field is exactly zero on the base-octave lattice.
    """
    if base_res < 1:
        raise ValueError("base_res must be positive")
    if octaves < 1:
        raise ValueError("octaves must be positive")
    if h < base_res or w < base_res:
        raise ValueError("field smaller than base_res")

    total = np.zeros((h, w))
    amp_sum = 0.0
    for o in range(octaves):
        res = base_res * (1 << o)
        amp = 0.5**o
        total += amp * _gradient_octave(h, w, res, prng.hash_key(seed, "octave", o))
        amp_sum += amp
    total /= amp_sum * _SINGLE_OCTAVE_BOUND
    return NoiseField(np.clip(total, -1.0, 1.0), octaves, seed)


def _gradient_octave(h: int, w: int, res: int, key: int) -> np.ndarray:
    """One octave of classic 2-d gradient noise with smoothstep blending."""
    rows = np.arange(res + 1, dtype=np.uint64)[:, None]
    cols = np.arange(res + 1, dtype=np.uint64)[None, :]
    bits = prng.hash_combine_array(prng.hash_combine_array(key, rows), cols)
    theta = 2.0 * np.pi * prng.uniform_from_u64(bits)
    gy, gx = np.sin(theta), np.cos(theta)

    u = np.arange(h) * (res / h)
    v = np.arange(w) * (res / w)
    i0 = u.astype(np.int64)
    j0 = v.astype(np.int64)
    fy = (u - i0)[:, None]
    fx = (v - j0)[None, :]
    i1, j1 = i0 + 1, j0 + 1

    def corner(ii, jj, dy, dx):
        return gy[np.ix_(ii, jj)] * dy + gx[np.ix_(ii, jj)] * dx

    n00 = corner(i0, j0, fy, fx)
    n01 = corner(i0, j1, fy, fx - 1.0)
    n10 = corner(i1, j0, fy - 1.0, fx)
    n11 = corner(i1, j1, fy - 1.0, fx - 1.0)

    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    top = n00 + sx * (n01 - n00)
    bot = n10 + sx * (n11 - n10)
    return top + sy * (bot - top)


def binarize_mask(field: NoiseField | np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Min-max normalize the field and keep cells above the threshold."""
    v = field.values if isinstance(field, NoiseField) else np.asarray(field, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12:
        raise ValueError("degenerate noise field")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    return (v - lo) / (hi - lo) > threshold


def synthesize_pseudo(
    image: np.ndarray,
    mask: np.ndarray,
    texture: np.ndarray,
    opacity: float,
    patch_size: int = 16,
) -> PseudoSample:
    """Blend `texture` into `image` where `mask` is set.

    Inside the mask the output is (1 - opacity) * image + opacity * texture;
    outside it the input pixels pass through bit-identically.
    """
    img = np.asarray(image, dtype=np.float64)
    tex = np.asarray(texture, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    if tex.shape != img.shape:
        raise ValueError("texture shape mismatch")
    if m.shape != img.shape[:2]:
        raise ValueError("mask shape mismatch")
    if not 0.0 <= opacity <= 1.0:
        raise ValueError("opacity must lie in [0, 1]")
    h, w = m.shape
    if h % patch_size or w % patch_size:
        raise ValueError("image not patch-aligned")

    blend = (1.0 - opacity) * img + opacity * tex
    out = np.where(m[:, :, None], blend, img)
    patch = m.reshape(h // patch_size, patch_size, w // patch_size, patch_size)
    mask_patch = patch.any(axis=(1, 3)).astype(np.float64)
    return PseudoSample(out, m.copy(), mask_patch, float(opacity))


def procedural_texture(kind: str, h: int, w: int, seed: int) -> np.ndarray:
    """Deterministic texture images in [0, 1] used as blend sources."""
    stream = prng.SplitMix64(prng.hash_key(seed, "texture", kind))
    c0 = np.array([stream.next_float() for _ in range(3)])
    c1 = np.array([stream.next_float() for _ in range(3)])
    if kind == "stripes":
        period = 4 + stream.next_below(12)
        phase = stream.next_float() * period
        ramp = 0.5 + 0.5 * np.sin(2.0 * np.pi * (np.arange(w) + phase) / period)
        field = np.tile(ramp, (h, 1))
    elif kind == "checker":
        cell = 4 + stream.next_below(12)
        yy, xx = np.meshgrid(np.arange(h) // cell, np.arange(w) // cell, indexing="ij")
        field = ((yy + xx) % 2).astype(np.float64)
    elif kind == "blotch":
        noise = perlin_field(h, w, base_res=4, octaves=3, seed=stream.next_u64())
        field = 0.5 + 0.5 * noise.values
    else:
        raise ValueError(f"unknown texture kind: {kind!r}")
    return c0[None, None, :] + field[:, :, None] * (c1 - c0)[None, None, :]
