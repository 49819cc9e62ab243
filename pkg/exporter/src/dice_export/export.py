"""Turns image folders and prompt files into feature bundles the scoring
engine loads directly.

Input folder conventions, all optional beyond the images themselves:

    <id>.<ext>              image (ppm, png, jpg, jpeg, bmp)
    <id>_gt.<ext>           ground-truth anomaly mask; marks the entry label 1
    <id>_corrupt.<ext>      corrupted twin for pseudo features
    <id>_mask_patch.pgm     its corruption mask at patch resolution
    <id>_mask.<ext>         or at pixel resolution, pooled to the patch grid

Inputs of any size are standardized to the model's square input before
encoding. Every output file and bundle directory is written to a temp
name and renamed into place, so a concurrent reader never sees a partial
bundle.
"""

from __future__ import annotations

import json
import os
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from .dtf import atomic_write_bytes, dtf_bytes
from .errors import ExportConfigError, ExportDataError
from .model import IMAGE_MEAN, IMAGE_STD, DualEncoder, build_model
from . import tokenizer

IMAGE_EXTS = (".ppm", ".png", ".jpg", ".jpeg", ".bmp")
RESERVED_SUFFIXES = ("_gt", "_corrupt", "_mask", "_mask_patch")


@dataclass
class ExportJob:
    model_id: str
    out_dir: Path
    image_dir: Path | None = None
    prompt_file: Path | None = None
    prompt_file_anomalous: Path | None = None
    category: str | None = None
    device: str = "cpu"
    batch_size: int = 8
    checkpoint: Path | None = None

    def __post_init__(self):
        if not self.model_id:
            raise ExportConfigError("model id must not be empty")
        if self.image_dir is None and self.prompt_file is None:
            raise ExportConfigError("nothing to export: need --images and/or --prompts")
        if self.batch_size < 1:
            raise ExportConfigError("batch size must be positive")


@dataclass
class ImageItem:
    id: str
    image: Path
    gt: Path | None = None
    corrupt: Path | None = None
    patch_mask: Path | None = None
    pixel_mask: Path | None = None


def _find_aux(directory: Path, stem: str, exts) -> Path | None:
    for ext in exts:
        candidate = directory / f"{stem}{ext}"
        if candidate.exists():
            return candidate
    return None


def scan_images(image_dir: str | Path) -> list[ImageItem]:
    """Discover images and their side files; ids sort lexicographically."""
    src = Path(image_dir)
    if not src.is_dir():
        raise ExportDataError(f"image directory not found: {src}")
    items = []
    for path in sorted(src.iterdir()):
        if path.suffix.lower() not in IMAGE_EXTS or not path.is_file():
            continue
        if any(path.stem.endswith(suffix) for suffix in RESERVED_SUFFIXES):
            continue
        stem = path.stem
        item = ImageItem(
            id=stem,
            image=path,
            gt=_find_aux(src, f"{stem}_gt", (".pgm", *IMAGE_EXTS)),
            corrupt=_find_aux(src, f"{stem}_corrupt", IMAGE_EXTS),
            patch_mask=_find_aux(src, f"{stem}_mask_patch", (".pgm",)),
            pixel_mask=_find_aux(src, f"{stem}_mask", (".pgm", *IMAGE_EXTS)),
        )
        if item.corrupt is not None and item.patch_mask is None and item.pixel_mask is None:
            raise ExportDataError(f"{stem}: pseudo image without a corruption mask")
        items.append(item)
    if not items:
        raise ExportDataError(f"no images found in {src}")
    return items


def load_image(path: Path, size: int) -> np.ndarray:
    """Any Pillow-readable image -> float32 (size, size, 3) in [0, 1]."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((size, size), Image.BICUBIC)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ExportDataError(f"unreadable image: {path}: {exc}") from exc
    return np.asarray(rgb, dtype=np.float32) / 255.0


def load_mask(path: Path, size: int) -> np.ndarray:
    """Any Pillow-readable mask -> bool (size, size), nearest resized."""
    try:
        with Image.open(path) as img:
            gray = img.convert("L").resize((size, size), Image.NEAREST)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ExportDataError(f"unreadable mask: {path}: {exc}") from exc
    return np.asarray(gray) > 127


def pool_mask_to_patches(mask: np.ndarray, patch_size: int) -> np.ndarray:
    """A patch cell is corrupted when any pixel inside it is."""
    h, w = mask.shape
    if h % patch_size or w % patch_size:
        raise ExportDataError(f"mask shape {mask.shape} not divisible by patch {patch_size}")
    gh, gw = h // patch_size, w // patch_size
    cells = mask.reshape(gh, patch_size, gw, patch_size)
    return cells.any(axis=(1, 3)).astype(np.float64)


def write_pgm(path: Path, mask: np.ndarray) -> None:
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    h, w = data.shape
    atomic_write_bytes(path, b"P5\n%d %d\n255\n" % (w, h) + data.tobytes())


def _publish_dir(tmp_dir: Path, final_dir: Path) -> None:
    if final_dir.exists():
        shutil.rmtree(final_dir)
    os.replace(tmp_dir, final_dir)


def _to_batch(images: list[np.ndarray], device) -> torch.Tensor:
    mean = torch.tensor(IMAGE_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGE_STD).view(3, 1, 1)
    stack = torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2)
    return ((stack - mean) / std).to(device)


def _unit_rows(arr: np.ndarray, what: str) -> np.ndarray:
    flat = arr.reshape(-1, arr.shape[-1])
    norms = np.linalg.norm(flat, axis=-1, keepdims=True)
    if np.any(norms < 1e-6) or not np.all(np.isfinite(flat)):
        raise ExportDataError(f"degenerate embedding in {what}")
    return (flat / norms).reshape(arr.shape).astype(np.float32)


def _encode_images(model: DualEncoder, images: list[np.ndarray], batch_size: int):
    """Returns (class (n, d), patches (n, g, g, d)) as unit-normalized f32."""
    device = next(model.parameters()).device
    cls_parts, patch_parts = [], []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            batch = _to_batch(images[start : start + batch_size], device)
            cls, patches = model.visual(batch)
            cls_parts.append(cls.cpu().numpy())
            patch_parts.append(patches.cpu().numpy())
    return np.concatenate(cls_parts), np.concatenate(patch_parts)


def read_prompt_file(path: str | Path) -> list[str]:
    src = Path(path)
    if not src.exists():
        raise ExportDataError(f"prompt file not found: {src}")
    lines = src.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ExportDataError(f"empty prompt file: {src}")
    for i, line in enumerate(lines):
        if not line.strip():
            raise ExportDataError(f"blank prompt at {src}:{i + 1}")
    return lines


def resolve_prompt_pair(prompt_file: str | Path, anomalous=None) -> tuple[Path, Path]:
    """The normal file's `_anomalous` sibling is implied unless given."""
    normal = Path(prompt_file)
    if anomalous is not None:
        return normal, Path(anomalous)
    stem = normal.stem
    if not stem.endswith("_normal"):
        raise ExportConfigError(
            "prompt file must be named <class>_normal.<ext> "
            "unless --prompts-anomalous is given"
        )
    sibling = normal.with_name(stem[: -len("_normal")] + "_anomalous" + normal.suffix)
    if not sibling.exists():
        raise ExportDataError(f"missing anomalous prompt file: {sibling}")
    return normal, sibling


def export_text_embeddings(
    prompt_file: str | Path, model: DualEncoder, out_path: str | Path, model_id: str
) -> int:
    """One unit-normalized embedding per prompt line, order preserved.

    Writes `<out_path>.dtf` (n, d) plus an `<out_path>.json` index with the
    prompts themselves. Returns the prompt count.
    """
    prompts = read_prompt_file(prompt_file)
    spec = model.spec
    device = next(model.parameters()).device
    rows = []
    with torch.no_grad():
        for start in range(0, len(prompts), 64):
            chunk = prompts[start : start + 64]
            encoded = [tokenizer.encode(p, spec.context) for p in chunk]
            tokens = torch.tensor([ids for ids, _ in encoded], device=device)
            eot = torch.tensor([idx for _, idx in encoded], device=device)
            rows.append(model.text(tokens, eot).cpu().numpy())
    embeddings = _unit_rows(np.concatenate(rows), f"prompts from {prompt_file}")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_bytes(out.with_suffix(".dtf"), dtf_bytes(embeddings))
    index = {
        "count": len(prompts),
        "dim": spec.embed_dim,
        "model": model_id,
        "prompts": prompts,
    }
    atomic_write_bytes(
        out.with_suffix(".json"), (json.dumps(index, sort_keys=True) + "\n").encode()
    )
    return len(prompts)


def _pseudo_arrays(item: ImageItem, spec) -> np.ndarray:
    """Patch-resolution corruption mask in {0, 1} for the item's twin."""
    if item.patch_mask is not None:
        mask = load_mask_exact(item.patch_mask)
        if mask.shape != (spec.grid, spec.grid):
            raise ExportDataError(
                f"{item.id}: patch mask {mask.shape} does not match grid "
                f"({spec.grid}, {spec.grid})"
            )
        return mask.astype(np.float64)
    pixel = load_mask(item.pixel_mask, spec.image_size)
    return pool_mask_to_patches(pixel, spec.patch_size)


def load_mask_exact(path: Path) -> np.ndarray:
    """Mask at its native resolution, no resizing."""
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            return np.asarray(gray) > 127
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ExportDataError(f"unreadable mask: {path}: {exc}") from exc


def export_image_features(
    items: list[ImageItem],
    model: DualEncoder,
    out_dir: str | Path,
    model_id: str,
    category: str,
    batch_size: int = 8,
) -> list[dict]:
    """Write one bundle directory per item; returns manifest entries."""
    spec = model.spec
    out = Path(out_dir)
    bundles = out / "bundles"
    masks = out / "masks"
    bundles.mkdir(parents=True, exist_ok=True)

    plan = []  # aligned with the encode batch: (item index, is_pseudo)
    images = []
    for i, item in enumerate(items):
        images.append(load_image(item.image, spec.image_size))
        plan.append((i, False))
        if item.corrupt is not None:
            images.append(load_image(item.corrupt, spec.image_size))
            plan.append((i, True))
    cls_all, patch_all = _encode_images(model, images, batch_size)

    main_row = {}
    pseudo_row = {}
    for row, (i, is_pseudo) in enumerate(plan):
        (pseudo_row if is_pseudo else main_row)[i] = row

    entries = []
    for i, item in enumerate(items):
        cls = _unit_rows(cls_all[main_row[i]], f"class token of {item.id}")
        patches = _unit_rows(patch_all[main_row[i]], f"patch grid of {item.id}")
        tmp = bundles / f".tmp-{item.id}-{os.getpid()}"
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir()
        atomic_write_bytes(tmp / "class.dtf", dtf_bytes(cls))
        atomic_write_bytes(tmp / "patch.dtf", dtf_bytes(patches))
        if i in pseudo_row:
            pseudo = _unit_rows(patch_all[pseudo_row[i]], f"pseudo grid of {item.id}")
            atomic_write_bytes(tmp / "pseudo_patch.dtf", dtf_bytes(pseudo))
            atomic_write_bytes(
                tmp / "pseudo_mask.dtf", dtf_bytes(_pseudo_arrays(item, spec))
            )
        meta = {
            "id": item.id,
            "h": spec.grid,
            "w": spec.grid,
            "d": spec.embed_dim,
            "model": model_id,
        }
        atomic_write_bytes(
            tmp / "meta.json", (json.dumps(meta, sort_keys=True) + "\n").encode()
        )
        _publish_dir(tmp, bundles / item.id)

        entry = {
            "id": item.id,
            "category": category,
            "label": 1 if item.gt is not None else 0,
            "features": f"bundles/{item.id}",
        }
        if item.gt is not None:
            masks.mkdir(parents=True, exist_ok=True)
            write_pgm(masks / f"{item.id}.pgm", load_mask(item.gt, spec.image_size))
            entry["mask"] = f"masks/{item.id}.pgm"
        entries.append(entry)
    return entries


def default_category(job: ExportJob) -> str:
    if job.category:
        return job.category
    if job.prompt_file is not None:
        stem = Path(job.prompt_file).stem
        return stem[: -len("_normal")] if stem.endswith("_normal") else stem
    if job.image_dir is not None:
        return Path(job.image_dir).name
    return "default"


def run_export(job: ExportJob) -> dict:
    """Execute a job end to end; returns a summary of what was written."""
    model = build_model(job.model_id, checkpoint=job.checkpoint, device=job.device)
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    category = default_category(job)
    weights = (
        f"checkpoint:{Path(job.checkpoint).name}" if job.checkpoint else "seeded-fallback"
    )
    summary: dict = {
        "model": job.model_id,
        "weights": weights,
        "category": category,
        "out": str(out),
    }

    text_features = None
    if job.prompt_file is not None:
        normal, anomalous = resolve_prompt_pair(job.prompt_file, job.prompt_file_anomalous)
        counts = {}
        paths = {}
        for polarity, src in (("normal", normal), ("anomalous", anomalous)):
            stem = Path(src).stem
            counts[polarity] = export_text_embeddings(
                src, model, out / "text" / stem, job.model_id
            )
            paths[polarity] = f"text/{stem}.dtf"
        summary["prompts"] = counts
        text_features = {category: paths}

    if job.image_dir is not None:
        items = scan_images(job.image_dir)
        entries = export_image_features(
            items, model, out, job.model_id, category, job.batch_size
        )
        manifest = {
            "name": category,
            "model": job.model_id,
            "weights": weights,
            "tool": "dice-export/1",
            "entries": entries,
        }
        if text_features is not None:
            manifest["text_features"] = text_features
        atomic_write_bytes(
            out / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        )
        summary["bundles"] = len(entries)
        summary["with_pseudo"] = sum(1 for item in items if item.corrupt is not None)
        summary["anomalous"] = sum(e["label"] for e in entries)
        summary["manifest"] = str(out / "manifest.json")
    return summary
