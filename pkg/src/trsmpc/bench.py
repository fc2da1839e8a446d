"""Experiment harness: sweeps over controller cells and seeds, CSV/JSON output.

A *cell* is one (update rule, sampler, sweep value) combination on one
environment. Every cell runs the same seeds ``base_seed + run``. Episodes
are distributed over a process pool; records are written by the parent
process as they arrive.
"""

from __future__ import annotations

import configparser
import csv
import itertools
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import CemConfig, MppiConfig
from .envs import make_env
from .lcd import load_sample_set, load_shipped, shipped_filename
from .mpc import ExperimentRecord, MpcConfig, Rule, run_episode
from .sampling import ALIASES
from .trust_region import TrustRegionConfig

logger = logging.getLogger(__name__)

AXES = ("epsilon", "samples", "iterations", "none")
CSV_HEADER = ("cell_id", "rule", "sampler", "env", "sweep_value", "seed", "cum_cost",
              "smoothness", "step_ms_mean", "step_ms_std", "truncated")
DEFAULT_RUNS = 20
FULL_RUNS = 100
MPPI_NOTE = "temperature: max(1e-8, (q90 - min) / kappa), a stand-in for the cited heuristic"


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "cartpole"
    rules: tuple = ("tr",)
    samplers: tuple = ("random",)
    axis: str = "none"
    values: tuple = (math.nan,)
    runs: int = DEFAULT_RUNS
    seed: int = 0
    n_samples: int = 40
    iterations: int = 3
    epsilon: float = 2.0
    h_min: float = -50.0
    buffer_size: int = 4
    beta: float = 2.0
    mppi_kappa: float = 10.0
    mppi_momentum: float = 0.1
    cem_elite_fraction: float = 0.1
    cem_momentum: float = 0.1
    out_dir: str = "results"
    lcd_dir: Optional[str] = None
    env_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(Rule(r).value for r in self.rules))
        object.__setattr__(self, "samplers", tuple(ALIASES.get(s, s) for s in self.samplers))
        object.__setattr__(self, "values", tuple(self.values))
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}")
        if not self.values or not self.rules or not self.samplers:
            raise ValueError("rules, samplers and sweep values must be nonempty")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        for s in self.samplers:
            if s not in ALIASES.values():
                raise ValueError(f"unknown sampler {s!r}")


@dataclass(frozen=True)
class Cell:
    rule: str
    sampler: str
    value: float

    def cell_id(self, cfg: ExperimentConfig) -> str:
        short = {v: k for k, v in ALIASES.items()}[self.sampler]
        tag = f"{cfg.env}/{self.rule}/{short}"
        return tag if cfg.axis == "none" else f"{tag}/{cfg.axis}={self.value:g}"


def cells(cfg: ExperimentConfig) -> list:
    return [Cell(r, s, float(v)) for r, s, v in itertools.product(cfg.rules, cfg.samplers, cfg.values)]


def mpc_config(cfg: ExperimentConfig, cell: Cell, seed: int) -> MpcConfig:
    n, iters, eps = cfg.n_samples, cfg.iterations, cfg.epsilon
    if cfg.axis == "samples":
        n = int(cell.value)
    elif cfg.axis == "iterations":
        iters = int(cell.value)
    elif cfg.axis == "epsilon":
        eps = cell.value
    rule = Rule(cell.rule)
    if rule is Rule.TRUST_REGION:
        rc = TrustRegionConfig(epsilon=eps, h_min=cfg.h_min)
    elif rule is Rule.MPPI:
        rc = MppiConfig(kappa=cfg.mppi_kappa, momentum=cfg.mppi_momentum)
    else:
        rc = CemConfig(elite_fraction=cfg.cem_elite_fraction, momentum=cfg.cem_momentum)
    return MpcConfig(n_samples=n, iterations=iters, buffer_size=min(cfg.buffer_size, n - 1),
                     rule=rule, sampler=cell.sampler, beta=cfg.beta, rule_config=rc, seed=seed)


def find_lcd_set(n: int, dim: int, lcd_dir=None):
    """Look in ``lcd_dir`` first, then among the sets bundled with the package."""
    if lcd_dir is not None:
        path = Path(lcd_dir) / shipped_filename(n, dim)
        if path.is_file():
            return load_sample_set(path)
    return load_shipped(n, dim)


def run_one(cfg: ExperimentConfig, cell: Cell, seed: int) -> ExperimentRecord:
    """One episode; failures become truncated records instead of exceptions."""
    params, ocp, stage_cost = make_env(cfg.env, cfg.env_overrides)
    mcfg = mpc_config(cfg, cell, seed)
    meta = dict(cell_id=cell.cell_id(cfg), rule=cell.rule, sampler=cell.sampler, env=cfg.env,
                sweep_value=cell.value)
    try:
        lcd_set = (find_lcd_set(mcfg.n_samples, ocp.sequence_dim, cfg.lcd_dir)
                   if mcfg.sampler == "lcd" else None)
        _, _, record, _ = run_episode(ocp, params.initial_state(), params.steps, mcfg, stage_cost,
                                      lcd_set=lcd_set, default_std=params.init_std,
                                      record_meta=meta)
    except Exception as exc:  # recorded, the sweep carries on
        logger.error("episode %s seed %d failed: %s", meta["cell_id"], seed, exc)
        record = ExperimentRecord(seed=seed, cum_cost=math.nan, smoothness=math.nan,
                                  step_ms_mean=math.nan, step_ms_std=math.nan, truncated=True,
                                  **meta)
    return record


def _run_job(args):
    return run_one(*args)


def pool_size() -> int:
    env = os.environ.get("TRSMPC_THREADS")
    n = os.cpu_count() or 1
    if env:
        try:
            n = min(n, int(env)) if int(env) > 0 else n
        except ValueError:
            logger.warning("ignoring TRSMPC_THREADS=%r", env)
    return max(1, n)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


class RecordWriter:
    """Streams records to a CSV file with the fixed header."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", newline="")
        except OSError as exc:
            raise OSError(f"cannot write records to {self.path}: {exc}") from exc
        self._writer = csv.writer(self._fh)
        self._writer.writerow(CSV_HEADER)
        self._fh.flush()

    def write(self, rec: ExperimentRecord):
        self._writer.writerow([_fmt(getattr(rec, k)) for k in CSV_HEADER])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_records(records, path) -> None:
    with RecordWriter(path) as w:
        for r in records:
            w.write(r)


def read_records(path) -> list:
    types = {f.name: f.type for f in fields(ExperimentRecord)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected CSV header {reader.fieldnames}")
        for row in reader:
            kw = {}
            for k, v in row.items():
                t = types[k]
                if t in ("float", float):
                    kw[k] = float(v)
                elif t in ("int", int):
                    kw[k] = int(v)
                elif t in ("bool", bool):
                    kw[k] = bool(int(v))
                else:
                    kw[k] = v
            out.append(ExperimentRecord(**kw))
    return out


def run_sweep(cfg: ExperimentConfig, csv_path=None, workers: Optional[int] = None) -> list:
    """Run every (cell, seed) pair and return the records in cell-major, seed order.

    With ``csv_path`` the records are streamed to disk as episodes finish.
    """
    jobs = [(cfg, c, cfg.seed + r) for c in cells(cfg) for r in range(cfg.runs)]
    workers = pool_size() if workers is None else workers
    writer = RecordWriter(csv_path) if csv_path is not None else None
    done = {}
    try:
        if workers <= 1:
            for i, job in enumerate(jobs):
                done[i] = _run_job(job)
                if writer:
                    writer.write(done[i])
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(_run_job, job): i for i, job in enumerate(jobs)}
                for fut in as_completed(futures):
                    rec = fut.result()
                    done[futures[fut]] = rec
                    if writer:
                        writer.write(rec)
    finally:
        if writer:
            writer.close()
    return [done[i] for i in range(len(jobs))]


def _stats(values) -> dict:
    if len(values) == 0:
        return {"median": None, "q25": None, "q75": None}
    q25, med, q75 = np.percentile(values, [25, 50, 75], method="linear")
    return {"median": float(med), "q25": float(q25), "q75": float(q75)}


def aggregate(records) -> dict:
    """Median and quartiles of the cumulative cost per cell.

    Truncated episodes are left out of the statistics and counted under
    ``failures``. Smoothness and per-step time get the same treatment.
    """
    groups = {}
    for r in records:
        groups.setdefault(r.cell_id, []).append(r)
    if not groups:
        raise ValueError("nothing to aggregate")
    out = {}
    for cid, recs in groups.items():
        ok = [r for r in recs if not r.truncated]
        entry = _stats([r.cum_cost for r in ok])
        entry.update(n=len(ok), failures=len(recs) - len(ok), rule=recs[0].rule,
                     sampler=recs[0].sampler, env=recs[0].env,
                     sweep_value=None if math.isnan(recs[0].sweep_value) else recs[0].sweep_value,
                     smoothness=_stats([r.smoothness for r in ok]),
                     step_ms=_stats([r.step_ms_mean for r in ok]))
        out[cid] = entry
    return out


def summary_document(summary: dict, cfg: Optional[ExperimentConfig] = None) -> dict:
    meta = {"metric": "cum_cost", "percentiles": "linear interpolation",
            "mppi_note": MPPI_NOTE}
    if cfg is not None:
        meta["config"] = {k: (list(v) if isinstance(v, tuple) else v)
                          for k, v in asdict(cfg).items()
                          if not (isinstance(v, float) and not math.isfinite(v))}
    return {"meta": meta, "cells": summary}


def write_summary(doc: dict, path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write summary to {path}: {exc}") from exc


def summary_schema() -> dict:
    ref = resources.files("trsmpc") / "data" / "summary.schema.json"
    return json.loads(ref.read_text())


def format_table(summary: dict) -> str:
    lines = [f"{'cell':<40} {'median':>12} {'q25':>12} {'q75':>12} {'n':>4} {'fail':>4}"]
    for cid, e in summary.items():
        nums = [("nan" if e[k] is None else f"{e[k]:.2f}") for k in ("median", "q25", "q75")]
        lines.append(f"{cid:<40} {nums[0]:>12} {nums[1]:>12} {nums[2]:>12} {e['n']:>4} "
                     f"{e['failures']:>4}")
    return "\n".join(lines)


# config file

_LIST_KEYS = {"rules", "samplers", "values"}


def load_config(path, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Read an INI file with an ``[experiment]`` section and an optional ``[env]`` section.

    Keys in ``[experiment]`` are :class:`ExperimentConfig` field names; list
    fields take comma-separated values. ``[env]`` entries override
    environment parameters.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"config file {path} not found")
    base = base or ExperimentConfig()
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    kw = {}
    if parser.has_section("experiment"):
        for key, raw in parser.items("experiment"):
            if key not in types or key == "env_overrides":
                raise ValueError(f"{path}: unknown experiment key {key!r}")
            if key in _LIST_KEYS:
                items = [t.strip() for t in raw.split(",") if t.strip()]
                kw[key] = tuple(float(t) for t in items) if key == "values" else tuple(items)
            else:
                default = getattr(base, key)
                if key == "lcd_dir" or isinstance(default, str):
                    kw[key] = raw
                elif isinstance(default, int) and not isinstance(default, bool):
                    kw[key] = int(raw)
                else:
                    kw[key] = float(raw)
    if parser.has_section("env"):
        kw["env_overrides"] = dict(parser.items("env"))
    return replace(base, **kw)
