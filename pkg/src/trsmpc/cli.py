"""Command line entry point: ``trsmpc <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import bench
from .lcd import optimize_lcd_set, save_sample_set

SWEEPS = {
    "sweep-eps": ("epsilon", (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0)),
    "sweep-samples": ("samples", (20, 40, 100, 300)),
    "sweep-iters": ("iterations", (1, 3, 5, 10)),
    "single": ("none", (math.nan,)),
}


def _csv_list(kind):
    def parse(text):
        return [kind(t) for t in text.split(",") if t.strip()]
    return parse


def _add_experiment_args(p):
    p.add_argument("--config", help="INI file with [experiment] and [env] sections")
    p.add_argument("--env", choices=["cartpole", "truck"])
    p.add_argument("--rule", type=_csv_list(str), help="tr, mppi, cem (comma separated)")
    p.add_argument("--sampler", type=_csv_list(str),
                   help="random, sobol, halton, lcd (comma separated)")
    p.add_argument("--n", type=int, help="fresh samples per iteration")
    p.add_argument("--iters", type=int, help="optimizer iterations per control step")
    p.add_argument("--eps", type=_csv_list(float),
                   help="KL bound; a list sets the sweep values of sweep-eps")
    p.add_argument("--hmin", type=float, help="entropy lower bound (default -50; -inf disables it)")
    p.add_argument("--values", type=_csv_list(float), help="override the sweep values")
    p.add_argument("--runs", type=int, help=f"seeds per cell (default {bench.DEFAULT_RUNS})")
    p.add_argument("--full", action="store_true", help=f"use {bench.FULL_RUNS} seeds per cell")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--out-dir", help="directory for the CSV and JSON outputs")
    p.add_argument("--lcd-dir", help="directory searched for LCD sets before the bundled ones")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trsmpc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SWEEPS:
        _add_experiment_args(sub.add_parser(name, help=f"run the {name} experiment"))
    g = sub.add_parser("lcd-gen", help="optimize and save an LCD sample set")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--budget", type=int, default=500, help="L-BFGS iterations per start")
    g.add_argument("--out", required=True)
    return parser


def experiment_config(args) -> bench.ExperimentConfig:
    axis, values = SWEEPS[args.command]
    cfg = bench.ExperimentConfig(axis=axis, values=values)
    if args.config:
        cfg = bench.load_config(args.config, cfg)
        cfg = replace(cfg, axis=axis)
    kw = {}
    if args.env:
        kw["env"] = args.env
    if args.rule:
        kw["rules"] = tuple(args.rule)
    if args.sampler:
        kw["samplers"] = tuple(args.sampler)
    if args.n is not None:
        kw["n_samples"] = args.n
    if args.iters is not None:
        kw["iterations"] = args.iters
    if args.eps:
        if axis == "epsilon":
            kw["values"] = tuple(args.eps)
        else:
            kw["epsilon"] = args.eps[0]
    if args.hmin is not None:
        kw["h_min"] = args.hmin
    if args.values:
        kw["values"] = tuple(args.values)
    if args.full:
        kw["runs"] = bench.FULL_RUNS
    if args.runs is not None:
        kw["runs"] = args.runs
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out_dir:
        kw["out_dir"] = args.out_dir
    if args.lcd_dir:
        kw["lcd_dir"] = args.lcd_dir
    return replace(cfg, **kw)


def run_experiment(args) -> int:
    cfg = experiment_config(args)
    out = Path(cfg.out_dir)
    stem = args.command.replace("-", "_")
    csv_path, json_path = out / f"{stem}_records.csv", out / f"{stem}_summary.json"
    n_jobs = len(bench.cells(cfg)) * cfg.runs
    print(f"{args.command}: {n_jobs} episodes on {bench.pool_size()} workers -> {csv_path}")
    t0 = time.perf_counter()
    records = bench.run_sweep(cfg, csv_path)
    summary = bench.aggregate(records)
    bench.write_summary(bench.summary_document(summary, cfg), json_path)
    print(bench.format_table(summary))
    print(f"done in {time.perf_counter() - t0:.1f} s; summary in {json_path}")
    return 0


def run_lcd_gen(args) -> int:
    t0 = time.perf_counter()
    s = optimize_lcd_set(args.n, args.dim, budget=args.budget, seed=args.seed)
    save_sample_set(s, args.out)
    flag = "ok" if s.quality_ok else "QUALITY CHECK FAILED"
    print(f"wrote {args.out}: N={args.n} dim={args.dim} objective={s.objective:.6g} "
          f"iterations={s.iterations} ({flag}, {time.perf_counter() - t0:.1f} s)")
    return 0 if s.quality_ok else 2


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "lcd-gen":
            return run_lcd_gen(args)
        return run_experiment(args)
    except (ValueError, OSError) as exc:
        print(f"trsmpc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
