"""``worldmark`` command line: gen-cases, map-actions, run, evaluate, report, correlate-human, mock-suite."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from . import pipeline
from .config import Config
from .metrics import METRIC_NAMES


def _add_run_dir(p: argparse.ArgumentParser) -> None:
    p.add_argument("run_dir", type=Path, help="benchmark run directory holding manifest.json")


def _global_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    # accepted before or after the subcommand; subparser copies never clobber an earlier value
    kw = (lambda v: {"default": v}) if defaults else (lambda v: {"default": argparse.SUPPRESS})
    p.add_argument("--config", type=Path, help="JSON or TOML config file", **kw(None))
    p.add_argument("--jobs", type=int, help="worker pool width", **kw(1))
    p.add_argument("--seed", type=int, help="selection and mock-model seed", **kw(0))
    p.add_argument("-v", "--verbose", action="store_true", **kw(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="worldmark", description=__doc__)
    _global_flags(parser, True)
    sub = parser.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        p = _add(name, **kw)
        _global_flags(p, False)
        return p

    sub.add_parser = add_parser

    p = sub.add_parser("gen-cases", help="select actions per image and write manifest.json")
    p.add_argument("image_dir", type=Path)
    p.add_argument("run_dir", type=Path)
    p.add_argument("--models", required=True, help="comma-separated model ids")
    p.add_argument("--select", choices=("vlm", "all", "file"), default="vlm")
    p.add_argument("--selection-file", help="JSON {image_name: [sequence ids]} for --select file")
    p.add_argument("--viewpoint", choices=("first", "third"))
    p.add_argument("--style", choices=("real", "stylized"))
    p.add_argument("--scene", choices=("nature", "city", "indoor"))
    p.add_argument("--tier", choices=("easy", "medium", "hard"))
    p.add_argument("--actions-per-image", type=int, default=5)
    p.add_argument("--min-actions", type=int, default=5)

    for name, help_ in (("map-actions", "write model-native payloads"),
                        ("run", "invoke model runners"),
                        ("evaluate", "compute the eight metrics per case")):
        _add_run_dir(sub.add_parser(name, help=help_))

    p = sub.add_parser("report", help="write per-split leaderboards")
    _add_run_dir(p)
    p.add_argument("--format", choices=("table", "csv", "json", "all"), default="all")
    p.add_argument("--out", type=Path, help="output directory (default RUN_DIR/reports)")

    p = sub.add_parser("correlate-human", help="Spearman rho between human and metric rankings")
    p.add_argument("rankings", type=Path, help="CSV: set_id,rank_1,...,rank_k (model ids, best first)")
    _add_run_dir(p)
    p.add_argument("--dimension", default="all", choices=("all", *METRIC_NAMES))

    p = sub.add_parser("mock-suite", help="end-to-end benchmark against the built-in mock model")
    p.add_argument("run_dir", type=Path, nargs="?", default=Path("worldmark-mock-run"))
    p.add_argument("--scenes", type=int, default=50, help="scenes; each gives a first- and third-person image")
    p.add_argument("--actions-per-image", type=int, default=5)
    return parser


def _print_summary(summary: pipeline.StageSummary) -> int:
    print(summary)
    for case_id, err in sorted(summary.failures.items()):
        print(f"  {case_id}: {err}", file=sys.stderr)
    return 1 if summary.failed else 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config = Config.load(args.config) if args.config else None
    try:
        if args.command == "gen-cases":
            manifest = pipeline.gen_cases(
                args.image_dir, [m.strip() for m in args.models.split(",") if m.strip()], args.run_dir,
                select=args.select, config=config, selection_file=args.selection_file,
                viewpoint=args.viewpoint, style=args.style, scene=args.scene, tier=args.tier,
                per_image=args.actions_per_image, min_actions=args.min_actions, seed=args.seed)
            print(f"{len(manifest.images)} images, {len(manifest.cases)} cases -> {args.run_dir / 'manifest.json'}")
            return 0
        if args.command == "map-actions":
            return _print_summary(pipeline.map_actions(args.run_dir, config, args.jobs))
        if args.command == "run":
            return _print_summary(pipeline.run(args.run_dir, config, args.jobs))
        if args.command == "evaluate":
            return _print_summary(pipeline.evaluate(args.run_dir, config, args.jobs))
        if args.command == "report":
            formats = ("table", "csv", "json") if args.format == "all" else (args.format,)
            written = pipeline.report(args.run_dir, formats, args.out)
            if "table" in written:
                print(written["table"].read_text(encoding="utf-8"), end="")
            for path in written.values():
                print(f"wrote {path}")
            return 0
        if args.command == "correlate-human":
            print(pipeline.correlate(args.run_dir, args.rankings, args.dimension), end="")
            return 0
        if args.command == "mock-suite":
            start = time.perf_counter()
            result = pipeline.mock_suite(args.run_dir, seed=args.seed, jobs=args.jobs, n_scenes=args.scenes,
                                         per_image=args.actions_per_image)
            for s in result.stages:
                _print_summary(s)
            print(result.reports["table"].read_text(encoding="utf-8"), end="")
            print(f"{len(result.manifest.cases)} cases in {time.perf_counter() - start:.1f} s")
            return 1 if result.failed else 0
    except (pipeline.PipelineError, ValueError, KeyError, OSError) as exc:
        print(f"worldmark {args.command}: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
