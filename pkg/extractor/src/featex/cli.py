"""Command line entry point for extraction jobs."""

from __future__ import annotations

import argparse
import logging
import sys

from .extract import DEFAULT_SPACES, ExtractorJob, run_extraction
from .models import ModelLoadError, ToyIQA, ToyMLLM, ToyText, ToyVision


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featex",
        description="Extract feature matrices and answer losses from an instruction dataset.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    extract = sub.add_parser("extract", help="run feature and loss extraction")
    extract.add_argument("--dataset", required=True, help="dataset directory (records.jsonl + images)")
    extract.add_argument("--out", required=True, help="output directory")
    extract.add_argument(
        "--spaces",
        default=",".join(DEFAULT_SPACES),
        help=f"comma-separated feature spaces (default: {','.join(DEFAULT_SPACES)})",
    )
    extract.add_argument("--mllm", default=ToyMLLM.name)
    extract.add_argument("--vision-model", default=ToyVision.name)
    extract.add_argument("--text-model", default=ToyText.name)
    extract.add_argument("--iqa-model", default=ToyIQA.name)
    extract.add_argument(
        "--layers",
        default=",".join(str(i) for i in ToyMLLM.default_layers),
        help="comma-separated hidden layer indices, shallow to deep",
    )
    extract.add_argument("--batch-size", type=int, default=16)
    extract.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        layers = tuple(int(tok) for tok in args.layers.split(",") if tok.strip())
    except ValueError:
        print(f"error: cannot parse --layers {args.layers!r}", file=sys.stderr)
        return 2
    try:
        job = ExtractorJob(
            dataset_dir=args.dataset,
            out_dir=args.out,
            spaces=tuple(tok.strip() for tok in args.spaces.split(",") if tok.strip()),
            mllm=args.mllm,
            vision_model=args.vision_model,
            text_model=args.text_model,
            iqa_model=args.iqa_model,
            layer_indices=layers,
            batch_size=args.batch_size,
        )
        result = run_extraction(job)
    except (ValueError, ModelLoadError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    for space, path in result.feature_paths.items():
        print(f"wrote {path} ({len(result.ids)} rows) [{space}]")
    if result.loss_path is not None:
        n_rows = len(result.ids) - len(result.skipped_losses)
        print(f"wrote {result.loss_path} ({n_rows} rows)")
    if result.skipped_images:
        print(f"skipped {len(result.skipped_images)} samples with undecodable images")
    if result.skipped_losses:
        print(f"omitted {len(result.skipped_losses)} loss rows")
    return 0


if __name__ == "__main__":
    sys.exit(main())
