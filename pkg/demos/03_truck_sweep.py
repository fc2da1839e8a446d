"""
A small iteration sweep on the truck
====================================

The bench module runs every (rule, sampler, sweep value) cell over a set of
seeds and summarizes the cumulative cost by median and quartiles. This demo
runs a reduced version of the iteration sweep (three seeds, two samplers)
and writes the same CSV and JSON files the command line tool produces::

    trsmpc sweep-iters --env truck --rule tr,mppi --sampler random,lcd --runs 3

Run with ``python demos/03_truck_sweep.py`` (under a minute on one core).
"""

import tempfile
from pathlib import Path

from trsmpc import bench

cfg = bench.ExperimentConfig(env="truck", rules=("tr", "mppi"), samplers=("random", "lcd"),
                             axis="iterations", values=(1, 3), runs=3)
print(f"{len(bench.cells(cfg))} cells x {cfg.runs} seeds")

out = Path(tempfile.mkdtemp())
records = bench.run_sweep(cfg, out / "records.csv")
summary = bench.aggregate(records)
bench.write_summary(bench.summary_document(summary, cfg), out / "summary.json")
print(bench.format_table(summary))

# %%
# Smoothness (sum of squared control changes) and time per control step are
# aggregated the same way.
for cid, e in summary.items():
    print(f"{cid:<36} smoothness {e['smoothness']['median']:.4f}  "
          f"{e['step_ms']['median']:.1f} ms/step")
print(f"files in {out}")
