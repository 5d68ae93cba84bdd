"""``gatelab run | render | report`` command line."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .experiment import ConfigError, aggregate_sweep, load_config, run_experiment
from .plots import render_plots


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    matrix = cfg.run_matrix()
    if args.dry_run:
        print(f"experiment {cfg.name}: {len(matrix)} runs -> {cfg.resolved_output_dir()}")
        for run in matrix:
            print(f"  {run.run_id}")
        return 0
    out_dir, results = run_experiment(cfg, workers=args.workers)
    bad = [r for r in results if r["status"] != "completed"]
    for r in bad:
        print(f"run {r['run_id']} {r['status']}: {r.get('message', '')}", file=sys.stderr)
    print(f"{len(results) - len(bad)}/{len(results)} runs completed; outputs in {out_dir}")
    return 1 if bad else 0


def _cmd_render(args) -> int:
    written = render_plots(args.run_dir)
    for p in written:
        print(p)
    return 0


def _cmd_report(args) -> int:
    path = aggregate_sweep(args.sweep_dir)
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            print(",".join(row))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatelab", description="Attention-network aggregation experiments")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="validate a JSON config and run its sweep")
    r.add_argument("config")
    r.add_argument("--dry-run", action="store_true", help="validate and list runs without training")
    r.add_argument("--workers", type=int, default=1, help="concurrent runs (default 1)")
    r.set_defaults(func=_cmd_run)
    d = sub.add_parser("render", help="(re)draw SVG plots of one run directory")
    d.add_argument("run_dir")
    d.set_defaults(func=_cmd_render)
    s = sub.add_parser("report", help="aggregate run summaries of a sweep directory")
    s.add_argument("sweep_dir")
    s.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return 2
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
