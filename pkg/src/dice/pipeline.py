"""Dataset manifests, the evaluation engine, and the synthetic fixture.

The engine scores every image of a manifest in one of three modes:

    text      language score map only
    dual      visual reference map added to the language map
    dual_tta  adapter-fit score map fused with the visual reference map

Reference images are drawn from the same category with a seeded,
self-excluding assignment whose k-draws are prefix-stable, so growing k only
ever grows each query's reference pool.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import prng
from .dtf import read_dtf
from .encoder import (
    ClassToken,
    FeatureBundle,
    PatchTokenGrid,
    load_feature_bundle,
    toy_encode_image,
    toy_encode_text,
)
from .imageio import read_pgm, read_ppm, write_pgm
from .metrics import (
    EXACT_SCAN_LIMIT,
    ScoredSet,
    aupro,
    auroc,
    average_precision,
    f1_max,
)
from .preprocess import TilePlan, normalize_channels, resize_bilinear, tile_merge, tile_split
from .prompts import aggregate_text_tokens, expand_templates, kind_for_category, TextTokenPair
from .scoring import (
    AnomalyMap,
    FusionWeights,
    fuse_classification,
    fuse_localization,
    joint_map,
    language_map,
    language_score,
    upsample_map,
    visual_reference_map,
)
from .synth import binarize_mask, perlin_field, procedural_texture, synthesize_pseudo
from .tta import AdapterState, TTAHyper, adapt_tokens, tta_fit, tta_score_map

MODES = ("text", "dual", "dual_tta")


class ConfigError(ValueError):
    """Bad flags or config values; maps to exit code 2."""


class DataError(ValueError):
    """Bad manifests, images, or feature files; maps to exit code 3."""


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    category: str
    label: int
    image: Path | None = None
    features: Path | None = None
    mask: Path | None = None


@dataclass(frozen=True)
class DatasetManifest:
    path: Path
    entries: tuple[ManifestEntry, ...]
    text_features: dict


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest JSON file.

    Each entry carries exactly one of `image` (PPM) or `features` (bundle
    directory); anomalous entries must carry a mask. Relative paths resolve
    against the manifest's directory.
    """
    p = Path(path)
    if not p.exists():
        raise DataError(f"manifest not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest is not valid JSON: {exc}") from exc
    base = p.parent
    entries = []
    seen = set()
    for item in raw.get("entries", []):
        eid = str(item.get("id", ""))
        if not eid:
            raise DataError("manifest entry without id")
        if eid in seen:
            raise DataError(f"duplicate manifest id: {eid}")
        seen.add(eid)
        label = item.get("label")
        if label not in (0, 1):
            raise DataError(f"entry {eid}: label must be 0 or 1")
        image = item.get("image")
        features = item.get("features")
        if (image is None) == (features is None):
            raise DataError(f"entry {eid}: need exactly one of image/features")
        mask = item.get("mask")
        if label == 1 and mask is None:
            raise DataError(f"entry {eid}: anomalous entry without mask")
        entries.append(
            ManifestEntry(
                id=eid,
                category=str(item.get("category", "default")),
                label=int(label),
                image=base / image if image else None,
                features=base / features if features else None,
                mask=base / mask if mask else None,
            )
        )
    if not entries:
        raise DataError("manifest has no entries")
    text_features = {}
    for cat, paths in raw.get("text_features", {}).items():
        text_features[cat] = {
            "normal": base / paths["normal"],
            "anomalous": base / paths["anomalous"],
        }
    return DatasetManifest(path=p, entries=tuple(entries), text_features=text_features)


def pair_assignment(n: int, k: int, seed: int) -> list[list[int]]:
    """Assign k reference indices to each of n images, never self.

    Per-query draws come from independent seeded streams and are sequential,
    so the assignment for k is a column prefix of the assignment for any
    larger k under the same seed.
    """
    if n < 2:
        raise ValueError("need at least two images to pair")
    if not 1 <= k <= n - 1:
        raise ValueError("k exceeds available references")
    out = []
    for i in range(n):
        stream = prng.SplitMix64(prng.hash_key(seed, "pairs", i))
        candidates = [j for j in range(n) if j != i]
        out.append(prng.sample_without_replacement(stream, candidates, k))
    return out


def pairing_seed(seed: int, category: str) -> int:
    """Per-category pairing stream key for a run seed."""
    return prng.hash_key(seed, "pairing", category)


def synth_seed(seed: int, entry_id: str, tile_index: int) -> int:
    """Per-image pseudo-anomaly stream key for a run seed."""
    return prng.hash_key(seed, "synth", entry_id, tile_index)


@dataclass
class RunConfig:
    """Everything an evaluation run depends on."""

    manifest: Path
    mode: str = "dual"
    k: int = 1
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    tau: float = 0.01
    weights: FusionWeights = field(default_factory=FusionWeights)
    tta: TTAHyper = field(default_factory=TTAHyper)
    fpr_limit: float = 0.3
    encoder_seed: int = 0
    patch_size: int = 16
    embed_dim: int = 64
    depth: int = 2
    synth_octaves: int = 1
    synth_base_res: int = 4
    synth_threshold: float = 0.5
    synth_texture: str = "blotch"
    opacity_range: tuple[float, float] = (0.2, 1.0)
    out: Path | None = None
    heatmaps: Path | None = None

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode: {self.mode!r}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if not 0.0 < self.fpr_limit <= 1.0:
            raise ConfigError("fpr_limit must lie in (0, 1]")
        lo, hi = self.opacity_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError("opacity range must lie within [0, 1]")

    def echo(self) -> dict:
        d = asdict(self)
        d["manifest"] = str(self.manifest)
        d["out"] = str(self.out) if self.out else None
        d["heatmaps"] = str(self.heatmaps) if self.heatmaps else None
        d["seeds"] = list(self.seeds)
        d["opacity_range"] = list(self.opacity_range)
        return d


@dataclass
class EvalReport:
    data: dict

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


@dataclass
class _EntryState:
    entry: ManifestEntry
    grids: list[PatchTokenGrid]
    cls_tokens: list[ClassToken]
    plan: TilePlan | None
    tile_images: list[np.ndarray] | None  # raw [0,1] tiles, toy mode only
    pseudo: list[tuple[PatchTokenGrid, np.ndarray]] | None  # file-backed
    gt: np.ndarray | None
    pixel_shape: tuple[int, int]


def _prepare_entry(entry: ManifestEntry, config: RunConfig) -> _EntryState:
    if entry.image is not None:
        if not entry.image.exists():
            raise DataError(f"entry {entry.id}: image not found: {entry.image}")
        try:
            img = read_ppm(entry.image)
        except ValueError as exc:
            raise DataError(f"entry {entry.id}: {exc}") from exc
        if img.shape[0] != 240:
            img = resize_bilinear(img, 240)
        try:
            plan, tiles = tile_split(img)
        except ValueError as exc:
            raise DataError(f"entry {entry.id}: {exc}") from exc
        grids, cls_tokens = [], []
        for tile in tiles:
            bundle = toy_encode_image(
                normalize_channels(tile),
                config.encoder_seed,
                patch_size=config.patch_size,
                dim=config.embed_dim,
                depth=config.depth,
                image_id=entry.id,
            )
            grids.append(bundle.patch)
            cls_tokens.append(bundle.class_token)
        state = _EntryState(
            entry=entry,
            grids=grids,
            cls_tokens=cls_tokens,
            plan=plan,
            tile_images=tiles,
            pseudo=None,
            gt=None,
            pixel_shape=(plan.height, plan.width),
        )
    else:
        try:
            bundle = load_feature_bundle(entry.features)
        except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"entry {entry.id}: {exc}") from exc
        pseudo = None
        if bundle.pseudo_patch is not None:
            pseudo = [(bundle.pseudo_patch, bundle.pseudo_mask)]
        state = _EntryState(
            entry=entry,
            grids=[bundle.patch],
            cls_tokens=[bundle.class_token],
            plan=None,
            tile_images=None,
            pseudo=pseudo,
            gt=None,
            pixel_shape=(bundle.patch.h * config.patch_size, bundle.patch.w * config.patch_size),
        )

    if entry.mask is not None:
        if not entry.mask.exists():
            raise DataError(f"entry {entry.id}: mask not found: {entry.mask}")
        gt = read_pgm(entry.mask) > 127
        state.gt = gt
        state.pixel_shape = gt.shape
        if entry.image is not None and gt.shape != (state.plan.height, state.plan.width):
            raise DataError(
                f"entry {entry.id}: mask shape {gt.shape} does not match "
                f"preprocessed image {(state.plan.height, state.plan.width)}"
            )
    return state


def _category_text(
    category: str, manifest: DatasetManifest, config: RunConfig, dim: int
) -> TextTokenPair:
    if category in manifest.text_features:
        paths = manifest.text_features[category]
        try:
            normal = read_dtf(paths["normal"]).astype(np.float64)
            anomalous = read_dtf(paths["anomalous"]).astype(np.float64)
        except (ValueError, OSError) as exc:
            raise DataError(f"category {category}: {exc}") from exc
        for arr in (normal, anomalous):
            if arr.ndim != 2 or arr.shape[1] != dim:
                raise DataError(f"category {category}: text/image dimension mismatch")
        # renormalize rows after the f32 round trip
        normal = normal / np.linalg.norm(normal, axis=1, keepdims=True)
        anomalous = anomalous / np.linalg.norm(anomalous, axis=1, keepdims=True)
    else:
        prompt_set = expand_templates(category, kind_for_category(category))
        normal = np.stack([toy_encode_text(p, config.encoder_seed, dim) for p in prompt_set.normal])
        anomalous = np.stack(
            [toy_encode_text(p, config.encoder_seed, dim) for p in prompt_set.anomalous]
        )
    return aggregate_text_tokens(normal, anomalous, config.tau)


def _entry_pixel_map(state: _EntryState, patch_maps: list[AnomalyMap]) -> np.ndarray:
    if state.plan is None:
        return upsample_map(patch_maps[0], *state.pixel_shape).values
    tiles = [
        upsample_map(m, state.plan.height, state.plan.tile).values for m in patch_maps
    ]
    return tile_merge(tiles, state.plan)


def _concat_values(maps: list[AnomalyMap]) -> AnomalyMap:
    if len(maps) == 1:
        return maps[0]
    return AnomalyMap(np.concatenate([m.values for m in maps], axis=1), maps[0].resolution)


def _pseudo_for_tile(
    state: _EntryState, tile_index: int, config: RunConfig, seed: int
) -> tuple[PatchTokenGrid, np.ndarray, float | None]:
    """Pseudo-anomaly patch grid and patch mask for one tile of one entry."""
    if state.tile_images is None:
        if state.pseudo is None:
            raise DataError(
                f"entry {state.entry.id}: dual_tta on feature bundles needs pseudo features"
            )
        grid, mask = state.pseudo[tile_index]
        return grid, mask, None
    raw = state.tile_images[tile_index]
    h, w = raw.shape[:2]
    key = synth_seed(seed, state.entry.id, tile_index)
    noise = perlin_field(h, w, config.synth_base_res, config.synth_octaves, key)
    mask = binarize_mask(noise, config.synth_threshold)
    texture = procedural_texture(config.synth_texture, h, w, prng.hash_key(key, "texture"))
    lo, hi = config.opacity_range
    opacity = lo + (hi - lo) * prng.SplitMix64(prng.hash_key(key, "opacity")).next_float()
    sample = synthesize_pseudo(raw, mask, texture, opacity, config.patch_size)
    bundle = toy_encode_image(
        normalize_channels(sample.image),
        config.encoder_seed,
        patch_size=config.patch_size,
        dim=config.embed_dim,
        depth=config.depth,
        image_id=state.entry.id + ":pseudo",
    )
    return bundle.patch, sample.mask_patch, opacity


def _score_category(
    states: list[_EntryState],
    text: TextTokenPair,
    config: RunConfig,
    seed: int,
    heat_dir: Path | None,
):
    """Score one category for one seed; returns per-entry results."""
    n = len(states)
    pairs = None
    if config.mode != "text":
        if n < 2:
            raise DataError(
                f"category {states[0].entry.category}: need at least two images for references"
            )
        try:
            pairs = pair_assignment(n, config.k, pairing_seed(seed, states[0].entry.category))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    cls_scores, labels, pixel_maps, gts, opacities = [], [], [], [], {}
    for i, state in enumerate(states):
        lang_maps = [language_map(g, text) for g in state.grids]
        cls_lang = float(np.mean([language_score(c, text) for c in state.cls_tokens]))

        if config.mode == "text":
            patch_maps = lang_maps
            cls_score = cls_lang
        else:
            ref_grids = [g for j in pairs[i] for g in states[j].grids]
            vis_maps = [visual_reference_map(g, ref_grids) for g in state.grids]
            if config.mode == "dual":
                patch_maps = [joint_map(v, l) for v, l in zip(vis_maps, lang_maps)]
                cls_score = fuse_classification(
                    cls_lang, _concat_values(vis_maps), None, config.weights
                )
            else:
                adapted_maps = []
                for t, grid in enumerate(state.grids):
                    pseudo_grid, pseudo_mask, opacity = _pseudo_for_tile(state, t, config, seed)
                    if opacity is not None:
                        opacities[state.entry.id] = opacity
                    joint = joint_map(vis_maps[t], lang_maps[t])
                    if config.tta.steps > 0 and np.asarray(pseudo_mask).any():
                        adapter, _ = tta_fit(
                            grid, pseudo_grid, pseudo_mask, text, joint, config.tta
                        )
                    else:
                        adapter = AdapterState.identity(grid.d)
                    adapted_maps.append(tta_score_map(adapt_tokens(adapter, grid), text))
                patch_maps = [
                    fuse_localization(v, a, config.weights)
                    for v, a in zip(vis_maps, adapted_maps)
                ]
                cls_score = fuse_classification(
                    cls_lang,
                    _concat_values(vis_maps),
                    _concat_values(adapted_maps),
                    config.weights,
                )

        pixel = _entry_pixel_map(state, patch_maps)
        gt = state.gt if state.gt is not None else np.zeros(pixel.shape, dtype=bool)
        if gt.shape != pixel.shape:
            raise DataError(
                f"entry {state.entry.id}: mask shape {gt.shape} vs map {pixel.shape}"
            )
        cls_scores.append(cls_score)
        labels.append(state.entry.label)
        pixel_maps.append(pixel)
        gts.append(gt)
        if heat_dir is not None:
            seed_dir = heat_dir / f"seed_{seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            emit_heatmap(AnomalyMap(pixel, "pixel"), seed_dir / f"{state.entry.id}.pgm")
    return cls_scores, labels, pixel_maps, gts, opacities


_METRIC_KEYS = (
    "image_auroc",
    "image_ap",
    "image_f1max",
    "pixel_auroc",
    "pixel_f1max",
    "aupro",
)


def _category_metrics(cls_scores, labels, pixel_maps, gts, fpr_limit) -> dict:
    image_set = ScoredSet(np.asarray(cls_scores), np.asarray(labels))
    flat_scores = np.concatenate([m.ravel() for m in pixel_maps])
    flat_labels = np.concatenate([g.ravel() for g in gts]).astype(np.int64)
    pixel_set = ScoredSet(flat_scores, flat_labels)
    try:
        return {
            "image_auroc": auroc(image_set),
            "image_ap": average_precision(image_set),
            "image_f1max": f1_max(image_set),
            "pixel_auroc": auroc(pixel_set),
            "pixel_f1max": f1_max(pixel_set),
            "aupro": aupro(pixel_maps, gts, fpr_limit),
        }
    except ValueError as exc:
        raise DataError(f"metrics undefined: {exc}") from exc


def run_eval(config: RunConfig) -> EvalReport:
    """Evaluate a manifest per the config; returns (and optionally saves)
    the report with per-seed, per-category, and aggregate metrics."""
    started = time.monotonic()
    manifest = load_manifest(config.manifest)

    by_category: dict[str, list[_EntryState]] = {}
    for entry in manifest.entries:
        by_category.setdefault(entry.category, []).append(_prepare_entry(entry, config))
    categories = sorted(by_category)

    dims = {s.grids[0].d for states in by_category.values() for s in states}
    if len(dims) != 1:
        raise DataError(f"feature dimension mismatch across entries: {sorted(dims)}")
    dim = dims.pop()

    texts = {cat: _category_text(cat, manifest, config, dim) for cat in categories}

    heat_dir = Path(config.heatmaps) if config.heatmaps else None
    per_seed = []
    synthesis: dict[str, dict] = {}
    pixel_count = 0
    for seed in config.seeds:
        cat_metrics = {}
        seed_opacities = {}
        for cat in categories:
            cls_scores, labels, pixel_maps, gts, opacities = _score_category(
                by_category[cat], texts[cat], config, seed, heat_dir
            )
            pixel_count = max(pixel_count, sum(m.size for m in pixel_maps))
            cat_metrics[cat] = _category_metrics(
                cls_scores, labels, pixel_maps, gts, config.fpr_limit
            )
            seed_opacities.update(opacities)
        mean_metrics = {
            key: float(np.mean([cat_metrics[c][key] for c in categories]))
            for key in _METRIC_KEYS
        }
        per_seed.append({"seed": seed, "categories": cat_metrics, "mean": mean_metrics})
        if seed_opacities:
            synthesis[str(seed)] = seed_opacities

    def across_seeds(values: list[float]) -> dict:
        arr = np.asarray(values, dtype=np.float64)
        return {"mean": float(arr.mean()), "std": float(arr.std())}

    category_summary = {
        cat: {
            key: across_seeds([ps["categories"][cat][key] for ps in per_seed])
            for key in _METRIC_KEYS
        }
        for cat in categories
    }
    mean_summary = {
        key: across_seeds([ps["mean"][key] for ps in per_seed]) for key in _METRIC_KEYS
    }

    report = EvalReport(
        data={
            "schema": "dice-eval-report/1",
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "elapsed_seconds": round(time.monotonic() - started, 3),
            "config": config.echo(),
            "interpretation": {
                "classification_language_term": "sample_level_language_score",
                "similarity_loss": "literal_cosine" if config.tta.literal_sim_loss else "one_minus_cosine",
                "threshold_scan": "quantile" if pixel_count > EXACT_SCAN_LIMIT else "exact",
                "reference_assignment": "seeded_prefix_stable_no_self",
                "wide_images": "two_tile_overlap_average",
            },
            "seeds": list(config.seeds),
            "results": {
                "per_seed": per_seed,
                "categories": category_summary,
                "mean": mean_summary,
            },
            "synthesis": {"opacity_range": list(config.opacity_range), "opacity": synthesis}
            if synthesis
            else None,
        }
    )
    if config.out is not None:
        report.save(config.out)
    return report


def emit_heatmap(anomaly_map: AnomalyMap, path: str | Path) -> None:
    """Write a pixel map as an 8-bit PGM plus a JSON sidecar with the scale.

    Constant maps come out mid-gray and are flagged degenerate so downstream
    tools do not mistake flatness for signal.
    """
    values = anomaly_map.values
    lo, hi = float(values.min()), float(values.max())
    degenerate = not hi > lo
    if degenerate:
        u8 = np.full(values.shape, 128, dtype=np.uint8)
    else:
        u8 = np.clip(np.rint((values - lo) / (hi - lo) * 255.0), 0, 255).astype(np.uint8)
    write_pgm(path, u8)
    sidecar = {"min": lo, "max": hi, "degenerate": degenerate}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def make_synthetic_fixture(
    out_dir: str | Path,
    n_images: int = 8,
    seed: int = 0,
    size: int = 240,
    category: str = "weave",
) -> Path:
    """Generate a deterministic image dataset with pixel-exact masks.

    Even-indexed entries are clean striped textures; odd-indexed entries get
    a noise-masked checker blend plus the matching ground-truth mask.
    Regeneration with the same arguments is byte-identical. Returns the
    manifest path.
    """
    if n_images < 2:
        raise ValueError("need at least two images")
    if size % 16:
        raise ValueError("size must be a multiple of 16")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    from .imageio import write_ppm  # local import keeps module surface tidy

    c_lo = np.array([0.18, 0.22, 0.30])
    c_hi = np.array([0.72, 0.66, 0.58])
    entries = []
    for i in range(n_images):
        key = prng.hash_key(seed, "fixture", i)
        stream = prng.SplitMix64(key)
        # registered pattern with mild photometric variation between images
        brightness = 0.97 + 0.06 * stream.next_float()
        tint = 1.0 + 0.04 * (np.array([stream.next_float() for _ in range(3)]) - 0.5)
        ramp = 0.5 + 0.5 * np.sin(2.0 * np.pi * np.arange(size) / 24.0)
        image = c_lo[None, None, :] + ramp[None, :, None] * (c_hi - c_lo)[None, None, :]
        image = np.clip(image * brightness * tint[None, None, :], 0.0, 1.0) * np.ones((size, 1, 1))

        label = i % 2
        name = f"{category}_{i:03d}"
        entry = {"id": name, "category": category, "label": label, "image": f"images/{name}.ppm"}
        if label == 1:
            noise = perlin_field(size, size, base_res=4, octaves=2, seed=prng.hash_key(key, "mask"))
            mask = binarize_mask(noise, 0.62)
            texture = procedural_texture("checker", size, size, prng.hash_key(key, "texture"))
            opacity = 0.7 + 0.3 * stream.next_float()
            sample = synthesize_pseudo(image, mask, texture, opacity)
            write_ppm(out / "images" / f"{name}.ppm", sample.image)
            write_pgm(out / "masks" / f"{name}.pgm", mask.astype(np.uint8) * 255)
            entry["mask"] = f"masks/{name}.pgm"
        else:
            write_ppm(out / "images" / f"{name}.ppm", image)
        entries.append(entry)

    manifest = {"name": f"fixture-{category}", "entries": entries}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
