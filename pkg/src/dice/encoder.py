"""Toy deterministic image encoder and feature bundle IO.

The encoder stands in for a frozen CLIP backbone at desk scale. It runs the
same two-path forward used on real features: a standard Q-K-V attention stack
that yields the class token, and a parallel value-value attention stack whose
output keeps patch tokens locally grounded for dense scoring. Real features
arrive through the same FeatureBundle container, produced by the exporter.

All weights are generated from the splitmix64 stream in `prng`, so encodings
are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import prng
from .dtf import read_dtf, write_dtf


@dataclass(frozen=True)
class ClassToken:
    """Unit-norm image-level embedding."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("class token must be 1-d")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite tokens")
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            raise ValueError("zero-norm class token")
        object.__setattr__(self, "v", v / norm)


@dataclass(frozen=True)
class PatchTokenGrid:
    """(h, w, d) grid of patch embeddings, unit-normalized at construction."""

    tokens: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tokens, dtype=np.float64)
        if t.ndim != 3:
            raise ValueError("patch grid must be (h, w, d)")
        if not np.all(np.isfinite(t)):
            raise ValueError("non-finite tokens")
        norms = np.linalg.norm(t, axis=-1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ValueError("zero-norm patch token")
        object.__setattr__(self, "tokens", t / norms)

    @property
    def h(self) -> int:
        return self.tokens.shape[0]

    @property
    def w(self) -> int:
        return self.tokens.shape[1]

    @property
    def d(self) -> int:
        return self.tokens.shape[2]

    def flat(self) -> np.ndarray:
        return self.tokens.reshape(-1, self.tokens.shape[2])


@dataclass
class FeatureBundle:
    """Per-image features: class token, patch grid, optional pseudo pair.

    `pseudo_patch` holds the patch grid of the corrupted twin of this image
    and `pseudo_mask` its patch-resolution corruption mask in {0, 1}.
    """

    id: str
    class_token: ClassToken
    patch: PatchTokenGrid
    pseudo_patch: PatchTokenGrid | None = None
    pseudo_mask: np.ndarray | None = None

    def __post_init__(self):
        if (self.pseudo_patch is None) != (self.pseudo_mask is None):
            raise ValueError("pseudo features incomplete")
        if self.pseudo_patch is not None:
            if self.pseudo_patch.tokens.shape != self.patch.tokens.shape:
                raise ValueError("shape mismatch: pseudo grid vs patch grid")
            mask = np.asarray(self.pseudo_mask)
            if mask.shape != (self.patch.h, self.patch.w):
                raise ValueError("shape mismatch: pseudo mask vs patch grid")


def vv_attention_block(values: np.ndarray, proj: np.ndarray, scale: float) -> np.ndarray:
    """One value-value attention layer with residual.

    Query, key, and value all equal the incoming tokens, so attention mixes
    each token with its nearest neighbours in feature space instead of
    relocating content the way trained Q-K attention does. Output is
    softmax(scale * V V^T) V proj^T + V.
    """
    v = np.asarray(values, dtype=np.float64)
    p = np.asarray(proj, dtype=np.float64)
    if v.ndim != 2 or p.shape != (v.shape[1], v.shape[1]):
        raise ValueError("values must be (n, d) with proj (d, d)")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(p))):
        raise ValueError("non-finite tokens")
    attn = _softmax_rows(scale * (v @ v.T))
    return (attn @ v) @ p.T + v


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def toy_encode_image(
    image: np.ndarray,
    seed: int,
    patch_size: int = 16,
    dim: int = 64,
    depth: int = 2,
    image_id: str = "",
) -> FeatureBundle:
    """Encode an (H, W, 3) float image into a FeatureBundle.

    H and W must be multiples of `patch_size` and at least 16. The Q-K-V
    stack produces the class token; the V-V stack produces the patch grid.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (H, W, 3)")
    h_px, w_px = img.shape[:2]
    if h_px < 16 or w_px < 16:
        raise ValueError("image too small")
    if h_px % patch_size or w_px % patch_size:
        raise ValueError("image not patch-aligned")
    if not np.all(np.isfinite(img)):
        raise ValueError("non-finite image")

    gh, gw = h_px // patch_size, w_px // patch_size
    p = patch_size
    patches = (
        img.reshape(gh, p, gw, p, 3).transpose(0, 2, 1, 3, 4).reshape(gh * gw, p * p * 3)
    )

    in_dim = p * p * 3
    w_embed = prng.normal_matrix(prng.hash_key(seed, "embed"), (dim, in_dim), in_dim**-0.5)
    pos = prng.normal_matrix(prng.hash_key(seed, "pos", gh, gw), (gh * gw, dim), 0.02)
    cls = prng.normal_matrix(prng.hash_key(seed, "cls"), (dim,), dim**-0.5)

    embedded = patches @ w_embed.T + pos
    scale = dim**-0.5

    # class-token path: standard Q-K-V attention over [cls; patches]
    tokens = np.concatenate([cls[None, :], embedded], axis=0)
    for layer in range(depth):
        wq = prng.normal_matrix(prng.hash_key(seed, "q", layer), (dim, dim), scale)
        wk = prng.normal_matrix(prng.hash_key(seed, "k", layer), (dim, dim), scale)
        wv = prng.normal_matrix(prng.hash_key(seed, "v", layer), (dim, dim), scale)
        wo = prng.normal_matrix(prng.hash_key(seed, "o", layer), (dim, dim), scale)
        q, k, v = tokens @ wq.T, tokens @ wk.T, tokens @ wv.T
        attn = _softmax_rows(scale * (q @ k.T))
        tokens = tokens + (attn @ v) @ wo.T

    # patch path: value-value attention reusing each layer's output projection
    values = embedded
    for layer in range(depth):
        wo = prng.normal_matrix(prng.hash_key(seed, "o", layer), (dim, dim), scale)
        values = vv_attention_block(values, wo, scale)

    return FeatureBundle(
        id=image_id,
        class_token=ClassToken(tokens[0]),
        patch=PatchTokenGrid(values.reshape(gh, gw, dim)),
    )


def toy_encode_text(text: str, seed: int, dim: int = 64) -> np.ndarray:
    """Hash-based stand-in for a text encoder: a unit vector per string.

    Real prompt embeddings of one domain cluster tightly, so the stand-in
    mixes a shared anchor with a small per-string residual; distinct strings
    still map to distinct vectors.
    """
    anchor = prng.normal_matrix(prng.hash_key(seed, "text-anchor"), (dim,))
    residual = prng.normal_matrix(prng.hash_key(seed, "text", text), (dim,))
    vec = anchor / np.linalg.norm(anchor) + 0.2 * residual / np.linalg.norm(residual)
    return vec / np.linalg.norm(vec)


def write_feature_bundle(bundle: FeatureBundle, directory: str | Path) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_dtf(out / "class.dtf", bundle.class_token.v)
    write_dtf(out / "patch.dtf", bundle.patch.tokens)
    if bundle.pseudo_patch is not None:
        write_dtf(out / "pseudo_patch.dtf", bundle.pseudo_patch.tokens)
        write_dtf(out / "pseudo_mask.dtf", np.asarray(bundle.pseudo_mask, dtype=np.float64))
    meta = {
        "id": bundle.id,
        "h": bundle.patch.h,
        "w": bundle.patch.w,
        "d": bundle.patch.d,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_feature_bundle(directory: str | Path) -> FeatureBundle:
    """Load a bundle directory, validating shapes and renormalizing tokens."""
    src = Path(directory)
    meta_path = src / "meta.json"
    if not meta_path.exists():
        raise ValueError(f"not a feature bundle: missing meta.json in {src}")
    meta = json.loads(meta_path.read_text())
    h, w, d = int(meta["h"]), int(meta["w"]), int(meta["d"])

    cls = read_dtf(src / "class.dtf")
    if cls.shape != (d,):
        raise ValueError(f"shape mismatch: class token {cls.shape} vs meta d={d}")
    patch = read_dtf(src / "patch.dtf")
    if patch.shape != (h, w, d):
        raise ValueError(f"shape mismatch: patch grid {patch.shape} vs meta {(h, w, d)}")

    pseudo_patch = None
    pseudo_mask = None
    has_pp = (src / "pseudo_patch.dtf").exists()
    has_pm = (src / "pseudo_mask.dtf").exists()
    if has_pp != has_pm:
        raise ValueError("pseudo features incomplete")
    if has_pp:
        pp = read_dtf(src / "pseudo_patch.dtf")
        if pp.shape != (h, w, d):
            raise ValueError(f"shape mismatch: pseudo grid {pp.shape} vs meta {(h, w, d)}")
        pm = read_dtf(src / "pseudo_mask.dtf")
        if pm.shape != (h, w):
            raise ValueError(f"shape mismatch: pseudo mask {pm.shape} vs meta {(h, w)}")
        pseudo_patch = PatchTokenGrid(pp)
        pseudo_mask = (pm > 0.5).astype(np.float64)

    return FeatureBundle(
        id=str(meta.get("id", src.name)),
        class_token=ClassToken(cls),
        patch=PatchTokenGrid(patch),
        pseudo_patch=pseudo_patch,
        pseudo_mask=pseudo_mask,
    )
