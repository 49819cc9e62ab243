#!/usr/bin/env python3
"""Sweep the reference-image count k in dual mode on the synthetic fixture.

More references can only lower each patch's nearest-neighbor score; whether
that helps ranking metrics depends on where the drop lands, so the sweep
reports the observed trade-off rather than assuming a direction.
"""

import argparse
from pathlib import Path

from dice.pipeline import RunConfig, make_synthetic_fixture, run_eval


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--fixture-dir", default="out/fixture", type=Path)
    ap.add_argument("--n-images", default=64, type=int)
    ap.add_argument("--fixture-seed", default=3, type=int)
    ap.add_argument("--seeds", default="1,2,3,4,5,6")
    ap.add_argument("--k-max", default=4, type=int)
    args = ap.parse_args()

    manifest = args.fixture_dir / "manifest.json"
    if not manifest.exists():
        manifest = make_synthetic_fixture(
            args.fixture_dir, n_images=args.n_images, seed=args.fixture_seed
        )
    seeds = tuple(int(s) for s in args.seeds.split(","))

    print(f"{'k':>3}{'pixel_auroc':>16}{'aupro':>16}{'image_auroc':>16}")
    for k in range(1, args.k_max + 1):
        config = RunConfig(manifest=manifest, mode="dual", k=k, seeds=seeds)
        mean = run_eval(config).data["results"]["mean"]
        print(
            f"{k:>3}"
            f"{mean['pixel_auroc']['mean']:>10.4f}+-{mean['pixel_auroc']['std']:.3f}"
            f"{mean['aupro']['mean']:>10.4f}+-{mean['aupro']['std']:.3f}"
            f"{mean['image_auroc']['mean']:>10.4f}+-{mean['image_auroc']['std']:.3f}"
        )


if __name__ == "__main__":
    main()
