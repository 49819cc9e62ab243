"""Command line interface.

Subcommands:

    dice eval            score a manifest and write a report
    dice synth           corrupt one image into a pseudo-anomaly pair
    dice fixture         generate the synthetic dataset
    dice export-prompts  write prompt ensembles as plain text

`dice eval` also accepts --config pointing at a JSON file whose keys mirror
the flag names; explicit flags override file values. Exit codes: 0 on
success, 2 on config errors, 3 on data errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .imageio import read_ppm, write_pgm, write_ppm
from .pipeline import (
    ConfigError,
    DataError,
    RunConfig,
    make_synthetic_fixture,
    run_eval,
)
from .prompts import expand_templates, kind_for_category, write_prompt_file
from .scoring import FusionWeights
from .synth import binarize_mask, perlin_field, procedural_texture, synthesize_pseudo
from .tta import TTAHyper

_EVAL_DEFAULTS = {
    "manifest": None,
    "mode": "dual",
    "k": 1,
    "seeds": "1,2,3,4,5,6",
    "tau": 0.01,
    "lambda1": 1.0,
    "lambda2": 1.5,
    "lambda3": 1.0,
    "lambda4": 1.0,
    "lambda5": 1.0,
    "steps": 2,
    "lr": 0.001,
    "beta_sim": 0.5,
    "literal_sim_loss": False,
    "fpr_limit": 0.3,
    "encoder_seed": 0,
    "patch_size": 16,
    "dim": 64,
    "depth": 2,
    "octaves": 1,
    "base_res": 4,
    "threshold": 0.5,
    "texture": "blotch",
    "opacity_min": 0.2,
    "opacity_max": 1.0,
    "out": None,
    "heatmaps": None,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dice")
    sub = parser.add_subparsers(dest="command", required=True)

    ev = sub.add_parser("eval", help="score a manifest and write a report")
    ev.add_argument("--manifest")
    ev.add_argument("--mode", choices=("text", "dual", "dual_tta"))
    ev.add_argument("--config", help="JSON file mirroring these flags")
    ev.add_argument("--k", type=int)
    ev.add_argument("--seeds", help="comma-separated run seeds")
    ev.add_argument("--tau", type=float)
    for i in range(1, 6):
        ev.add_argument(f"--lambda{i}", type=float, dest=f"lambda{i}")
    ev.add_argument("--steps", type=int)
    ev.add_argument("--lr", type=float)
    ev.add_argument("--beta-sim", type=float, dest="beta_sim")
    ev.add_argument("--literal-sim-loss", action="store_const", const=True, dest="literal_sim_loss")
    ev.add_argument("--fpr-limit", type=float, dest="fpr_limit")
    ev.add_argument("--encoder-seed", type=int, dest="encoder_seed")
    ev.add_argument("--patch-size", type=int, dest="patch_size")
    ev.add_argument("--dim", type=int)
    ev.add_argument("--depth", type=int)
    ev.add_argument("--octaves", type=int)
    ev.add_argument("--base-res", type=int, dest="base_res")
    ev.add_argument("--threshold", type=float)
    ev.add_argument("--texture")
    ev.add_argument("--opacity-min", type=float, dest="opacity_min")
    ev.add_argument("--opacity-max", type=float, dest="opacity_max")
    ev.add_argument("--out")
    ev.add_argument("--heatmaps")
    ev.set_defaults(func=_cmd_eval)

    sy = sub.add_parser("synth", help="corrupt one image into a pseudo-anomaly pair")
    sy.add_argument("--image", required=True)
    sy.add_argument("--out-dir", required=True, dest="out_dir")
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--texture", default="blotch", help="texture kind or a PPM path")
    sy.add_argument("--opacity", type=float, default=0.8)
    sy.add_argument("--octaves", type=int, default=1)
    sy.add_argument("--base-res", type=int, default=4, dest="base_res")
    sy.add_argument("--threshold", type=float, default=0.5)
    sy.add_argument("--patch-size", type=int, default=16, dest="patch_size")
    sy.set_defaults(func=_cmd_synth)

    fx = sub.add_parser("fixture", help="generate the synthetic dataset")
    fx.add_argument("--out", required=True)
    fx.add_argument("--n", type=int, default=8)
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--size", type=int, default=240)
    fx.add_argument("--category", default="weave")
    fx.set_defaults(func=_cmd_fixture)

    xp = sub.add_parser("export-prompts", help="write prompt ensembles as text files")
    xp.add_argument("--class-name", required=True, dest="class_name")
    xp.add_argument("--kind", choices=("surface", "object"))
    xp.add_argument("--out", required=True)
    xp.set_defaults(func=_cmd_export_prompts)

    return parser


def _merged_eval_options(args: argparse.Namespace) -> dict:
    merged = dict(_EVAL_DEFAULTS)
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            file_opts = json.loads(cfg_path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        unknown = set(file_opts) - set(_EVAL_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_opts)
    for key in _EVAL_DEFAULTS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            merged[key] = flag_value
    return merged


def _parse_seeds(value) -> tuple[int, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(part) for part in str(value).split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad seed list: {value!r}") from exc


def _cmd_eval(args: argparse.Namespace) -> int:
    opts = _merged_eval_options(args)
    if not opts["manifest"]:
        raise ConfigError("missing --manifest")
    try:
        weights = FusionWeights(
            w_visual=opts["lambda1"],
            w_adapted=opts["lambda2"],
            w_language=opts["lambda3"],
            w_visual_max=opts["lambda4"],
            w_adapted_max=opts["lambda5"],
        )
        tta = TTAHyper(
            learning_rate=opts["lr"],
            beta_sim=opts["beta_sim"],
            steps=opts["steps"],
            literal_sim_loss=bool(opts["literal_sim_loss"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    config = RunConfig(
        manifest=Path(opts["manifest"]),
        mode=opts["mode"],
        k=opts["k"],
        seeds=_parse_seeds(opts["seeds"]),
        tau=opts["tau"],
        weights=weights,
        tta=tta,
        fpr_limit=opts["fpr_limit"],
        encoder_seed=opts["encoder_seed"],
        patch_size=opts["patch_size"],
        embed_dim=opts["dim"],
        depth=opts["depth"],
        synth_octaves=opts["octaves"],
        synth_base_res=opts["base_res"],
        synth_threshold=opts["threshold"],
        synth_texture=opts["texture"],
        opacity_range=(opts["opacity_min"], opts["opacity_max"]),
        out=Path(opts["out"]) if opts["out"] else None,
        heatmaps=Path(opts["heatmaps"]) if opts["heatmaps"] else None,
    )
    report = run_eval(config)
    mean = report.data["results"]["mean"]
    for key in sorted(mean):
        print(f"{key}: {mean[key]['mean']:.4f} +/- {mean[key]['std']:.4f}")
    if config.out:
        print(f"report written to {config.out}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    image_path = Path(args.image)
    if not image_path.exists():
        raise DataError(f"image not found: {image_path}")
    image = read_ppm(image_path)
    h, w = image.shape[:2]
    try:
        noise = perlin_field(h, w, args.base_res, args.octaves, args.seed)
        mask = binarize_mask(noise, args.threshold)
        if args.texture.endswith(".ppm"):
            texture = read_ppm(args.texture)
            if texture.shape != image.shape:
                raise DataError("texture image must match the input size")
        else:
            texture = procedural_texture(args.texture, h, w, args.seed)
        sample = synthesize_pseudo(image, mask, texture, args.opacity, args.patch_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = image_path.stem
    write_ppm(out_dir / f"{stem}_corrupt.ppm", sample.image)
    write_pgm(out_dir / f"{stem}_mask.pgm", sample.mask_pixel.astype(np.uint8) * 255)
    write_pgm(out_dir / f"{stem}_mask_patch.pgm", (sample.mask_patch * 255).astype(np.uint8))
    meta = {
        "source": str(image_path),
        "seed": args.seed,
        "opacity": sample.opacity,
        "patch_size": args.patch_size,
        "mask_coverage": float(sample.mask_pixel.mean()),
    }
    (out_dir / f"{stem}_synth.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"wrote pseudo-anomaly pair for {stem} to {out_dir}")
    return 0


def _cmd_fixture(args: argparse.Namespace) -> int:
    try:
        manifest = make_synthetic_fixture(
            args.out, n_images=args.n, seed=args.seed, size=args.size, category=args.category
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"fixture manifest at {manifest}")
    return 0


def _cmd_export_prompts(args: argparse.Namespace) -> int:
    kind = args.kind or kind_for_category(args.class_name)
    try:
        prompt_set = expand_templates(args.class_name, kind)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_prompt_file(prompt_set.normal, out / f"{args.class_name}_normal.txt")
    write_prompt_file(prompt_set.anomalous, out / f"{args.class_name}_anomalous.txt")
    print(
        f"wrote {len(prompt_set.normal)} normal and {len(prompt_set.anomalous)} "
        f"anomalous prompts to {out}"
    )
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
