"""Command-line interface: select, report, sweep, bench."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .pipeline import PipelineConfig, PipelineError, emit_report, run_selection, sweep_ratios
from .synth import run_bench

log = logging.getLogger(__name__)


def _apply_overrides(config: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    updates = {}
    if args.ratio is not None:
        updates["budget_ratio"] = args.ratio
    if args.quota_strategy is not None:
        updates["quota_strategy"] = args.quota_strategy
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["out_dir"] = args.out
    if args.sampler is not None:
        raw = config.sampler
        sampler = dict(raw) if isinstance(raw, dict) else {}
        sampler["kind"] = args.sampler
        updates["sampler"] = sampler
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_select(args: argparse.Namespace) -> int:
    config = _apply_overrides(PipelineConfig.from_json(args.config), args)
    manifest = run_selection(config)
    print(
        f"selected {manifest.budget} of {manifest.n_samples} samples "
        f"across {manifest.k} clusters -> {config.out_dir}/manifest.json"
    )
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    paths = emit_report(args.run)
    for kind, path in sorted(paths.items()):
        print(f"{kind}: {path}")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    except ValueError:
        print(f"error: cannot parse ratios {args.ratios!r}", file=sys.stderr)
        return 2
    if not ratios:
        print("error: no ratios given", file=sys.stderr)
        return 2
    config = PipelineConfig.from_json(args.config)
    manifests = sweep_ratios(config, ratios)
    for ratio, manifest in zip(ratios, manifests):
        print(f"ratio {ratio:g}: {manifest.budget} samples")
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    results = run_bench(fast=args.fast)
    width = max(len(name) for name, _, _ in results)
    failures = 0
    for name, ok, detail in results:
        status = "pass" if ok else "FAIL"
        print(f"{name:<{width}}  {status}  {detail}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} of {len(results)} checks failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coresel",
        description="Deterministic cluster-based coreset selection for feature matrices.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_select = sub.add_parser("select", help="run the three-stage selection pipeline")
    p_select.add_argument("--config", required=True, help="path to a JSON config")
    p_select.add_argument("--ratio", type=float, help="override budget_ratio")
    p_select.add_argument("--sampler", help="override the sampler kind")
    p_select.add_argument("--quota-strategy", dest="quota_strategy", help="override the strategy preset")
    p_select.add_argument("--seed", type=int, help="override the seed")
    p_select.add_argument("--out", help="override the output directory")

    p_report = sub.add_parser("report", help="write metrics, 2-D coordinates, and a summary")
    p_report.add_argument("--run", required=True, help="a completed run directory")

    p_sweep = sub.add_parser("sweep", help="run several budget ratios off one clustering")
    p_sweep.add_argument("--config", required=True, help="path to a JSON config")
    p_sweep.add_argument("--ratios", required=True, help="comma-separated ratios, e.g. 0.05,0.1")

    p_bench = sub.add_parser("bench", help="run the oracle suite and print a pass/fail table")
    p_bench.add_argument("--fast", action="store_true", help="smaller fuzz counts")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    handlers = {
        "select": _cmd_select,
        "report": _cmd_report,
        "sweep": _cmd_sweep,
        "bench": _cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except PipelineError as e:
        print(f"error {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
