"""Command line entry point: endolab run | plot | families."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .families import FAMILIES
from .report import PLOT_COLUMNS, SchemaError, plot, run


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg.output = args.output
        man = run(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    for e in man.experiments:
        extra = f"  ({e['error']})" if "error" in e else ""
        print(f"{e['name']:<24} {e['status']:<13} {e['wall_time']:8.2f}s{extra}")
    print(f"summary: {man.summary}  -> {man.output}")
    return man.exit_code


def _cmd_plot(args) -> int:
    try:
        path = plot(args.csv, args.kind, args.out, args.side)
    except (SchemaError, FileNotFoundError) as e:
        print(f"plot error: {e}", file=sys.stderr)
        return 2
    print(path)
    return 0


def _cmd_families(args) -> int:
    for name, (kind, desc) in FAMILIES.items():
        print(f"{name:<16} {kind:<14} {desc}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="endolab", description="Torus endomorphism families: constructions, checks and reports.")
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run the experiments of a JSON config")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="override the output directory")
    p.set_defaults(fn=_cmd_run)
    p = sub.add_parser("plot", help="SVG plot of a report CSV")
    p.add_argument("csv")
    p.add_argument("--kind", required=True, choices=sorted(PLOT_COLUMNS))
    p.add_argument("--out")
    p.add_argument("--side", type=float, default=1.0, help="torus side for density plots")
    p.set_defaults(fn=_cmd_plot)
    p = sub.add_parser("families", help="list the canonical families")
    p.set_defaults(fn=_cmd_families)
    args = ap.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
