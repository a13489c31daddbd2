"""Command-line entry point: ``qnoiselab run|validate|describe``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .harness import SUITES, ConfigError, describe, emit, load_config, run

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CELL_FAILURES = 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="experiment config (TOML, or JSON by .json suffix)")
    p.add_argument("--seed", type=int, default=None, help="replace the config's seed list with this seed")
    p.add_argument("--cap-n", type=int, default=None, help="largest qubit count any cell may use")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qnoiselab", description="Seeded noise / leak / synchronization experiments.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute every cell of a config")
    _add_common(p_run)
    p_run.add_argument("--out", default=None, help="output directory (default: config 'output' or ./qnoiselab-out)")
    p_run.add_argument("--jobs", type=int, default=1, help="worker processes")
    p_run.add_argument(
        "--format", action="append", choices=("json", "csv", "plotdata"), default=None,
        help="output format; repeatable (default: json and csv)",
    )

    p_val = sub.add_parser("validate", help="check a config without running it")
    _add_common(p_val)

    p_desc = sub.add_parser("describe", help="print a suite's quantities and parameters")
    p_desc.add_argument("suite")
    return parser


def _suite_list() -> str:
    return "available suites: " + ", ".join(SUITES)


def _load(args):
    try:
        return load_config(args.config, cap_n=args.cap_n, seed=args.seed)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        if exc.field == "suite":
            print(_suite_list(), file=sys.stderr)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
    return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "describe":
        if args.suite not in SUITES:
            print(f"unknown suite {args.suite!r}", file=sys.stderr)
            print(_suite_list(), file=sys.stderr)
            return EXIT_INVALID
        print(describe(args.suite))
        return EXIT_OK

    config = _load(args)
    if config is None:
        return EXIT_INVALID

    if args.command == "validate":
        n_cells = len(config.cells())
        print(f"ok: suite {config.suite}, {n_cells} cell(s)")
        return EXIT_OK

    if args.jobs < 1:
        print("--jobs must be at least 1", file=sys.stderr)
        return EXIT_INVALID
    report = run(config, jobs=args.jobs)
    out_dir = Path(args.out or config.output or "qnoiselab-out")
    try:
        for fmt in args.format or ["json", "csv"]:
            for path in emit(report, fmt, out_dir):
                print(path)
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    n_fail = report["failures"]
    print(f"{len(report['cells'])} cell(s), {n_fail} failed", file=sys.stderr)
    if n_fail:
        for rec in report["cells"]:
            if rec["status"] != "ok":
                print(f"  {rec['id']}: {rec['error']}", file=sys.stderr)
        return EXIT_CELL_FAILURES
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
