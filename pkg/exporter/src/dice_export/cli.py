"""Command line interface.

    dice-export --model ViT-B-16-plus-240 --images DIR --prompts FILE --out DIR

Either --images or --prompts may be omitted; at least one is required.
The prompts file is the `<class>_normal.<ext>` list and its anomalous
sibling is picked up by name unless --prompts-anomalous points elsewhere.
Exit codes: 0 on success, 2 on config errors, 3 on data errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ExportConfigError, ExportDataError
from .export import ExportJob, run_export


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dice-export",
        description="encode images and prompt files into DTF feature bundles",
    )
    parser.add_argument("--model", required=True, help="registered model id")
    parser.add_argument("--images", help="image folder; side files per <id>_gt/_corrupt/_mask")
    parser.add_argument("--prompts", help="<class>_normal.<ext> prompt list, one per line")
    parser.add_argument("--prompts-anomalous", help="explicit anomalous prompt list")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--category", help="category name (default: prompt stem or folder)")
    parser.add_argument("--checkpoint", help="state dict for the chosen architecture")
    parser.add_argument("--device", default="cpu", help="torch device hint")
    parser.add_argument("--batch-size", type=int, default=8)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        job = ExportJob(
            model_id=args.model,
            out_dir=Path(args.out),
            image_dir=Path(args.images) if args.images else None,
            prompt_file=Path(args.prompts) if args.prompts else None,
            prompt_file_anomalous=Path(args.prompts_anomalous)
            if args.prompts_anomalous
            else None,
            category=args.category,
            device=args.device,
            batch_size=args.batch_size,
            checkpoint=Path(args.checkpoint) if args.checkpoint else None,
        )
        summary = run_export(job)
    except ExportConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ExportDataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3

    if "prompts" in summary:
        counts = summary["prompts"]
        print(
            f"embedded {counts['normal']} normal and {counts['anomalous']} "
            f"anomalous prompts for '{summary['category']}'"
        )
    if "bundles" in summary:
        print(
            f"exported {summary['bundles']} bundles "
            f"({summary['with_pseudo']} with pseudo pairs, "
            f"{summary['anomalous']} anomalous) using {summary['model']} "
            f"[{summary['weights']}]"
        )
        print(f"manifest at {summary['manifest']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
