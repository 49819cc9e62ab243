#!/usr/bin/env python3
"""Compare scoring modes on the synthetic fixture.

Generates the fixture if needed, evaluates text / dual / dual_tta with the
same seeds, and prints one metric row per mode.
"""

import argparse
from pathlib import Path

from dice.pipeline import RunConfig, make_synthetic_fixture, run_eval
from dice.tta import TTAHyper

METRICS = ("image_auroc", "pixel_auroc", "pixel_f1max", "aupro")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fixture-dir", default="out/fixture", type=Path)
    ap.add_argument("--n-images", default=64, type=int)
    ap.add_argument("--fixture-seed", default=3, type=int)
    ap.add_argument("--seeds", default="1,2,3,4,5,6")
    ap.add_argument("--steps", default=2, type=int, help="adapter steps in dual_tta")
    ap.add_argument("--out-dir", default=None, type=Path, help="where to keep the JSON reports")
    args = ap.parse_args()

    manifest = args.fixture_dir / "manifest.json"
    if not manifest.exists():
        manifest = make_synthetic_fixture(
            args.fixture_dir, n_images=args.n_images, seed=args.fixture_seed
        )
    seeds = tuple(int(s) for s in args.seeds.split(","))

    header = "mode      " + "".join(f"{m:>16}" for m in METRICS)
    print(header)
    print("-" * len(header))
    for mode in ("text", "dual", "dual_tta"):
        out = args.out_dir / f"{mode}.json" if args.out_dir else None
        if out:
            out.parent.mkdir(parents=True, exist_ok=True)
        config = RunConfig(
            manifest=manifest, mode=mode, seeds=seeds, tta=TTAHyper(steps=args.steps), out=out
        )
        mean = run_eval(config).data["results"]["mean"]
        row = f"{mode:<10}" + "".join(
            f"{mean[m]['mean']:>10.4f}+-{mean[m]['std']:.3f}" for m in METRICS
        )
        print(row)


if __name__ == "__main__":
    main()
