"""``spbl <subcommand> --config FILE [--seed N] [--out DIR] [--jobs K]``.

Exit codes: 0 success, 1 runtime error, 2 configuration error,
3 an acceptance check inside the run failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from spbl import __version__
from spbl.errors import ConfigError, SpblError
from spbl.xcli.config import SUBCOMMANDS, load_config
from spbl.xcli.experiments import run

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spbl", description="Run a learned-regularizer experiment.")
    ap.add_argument("--version", action="version", version=f"spbl {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="TOML config; omitted fields take the experiment defaults")
        p.add_argument("--seed", type=int, default=None, help="override seeds.master")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: out/<command>)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for grid evaluation")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    experiment = SUBCOMMANDS[args.command]
    if args.config is None and args.command == "solve-one":
        print("error: solve-one needs --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, experiment, seed=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs < 1:
        print("config error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(cfg, jobs=args.jobs)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SpblError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    out = args.out or Path("out") / args.command
    for p in report.write(out):
        print(p)
    for name, ok in report.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wall-clock {report.wall_clock:.2f} s")
    return EXIT_OK if report.passed else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
