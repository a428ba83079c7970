"""What each component buys.

Runs a handful of tasks under the full pipeline and the two ablations
(geometry-free tokens, memoryless graph) and prints success counts and failure
causes.  The memoryless arm still solves tasks that can be read off a single
frame, and collapses on tasks that need to remember something hidden or moved.

    python demos/02_ablations.py [n_seeds]
"""
from __future__ import annotations

import sys
import time

from stfgraph.config import DEFAULT
from stfgraph.harness.suite import RunConfig, SuiteReport, run_episodes

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5
tasks = ("containers", "stack-3", "cover-top", "unstack-then-stack", "hide-and-restore")
arms = {
    "full": DEFAULT,
    "no-stf": DEFAULT.with_(disable_stf_geometry=True),
    "no-cstg": DEFAULT.with_(disable_cstg_memory=True),
}

records = []
for name, cfg in arms.items():
    t0 = time.perf_counter()
    records += run_episodes(RunConfig(tasks, tuple(range(n_seeds)), pipeline=cfg, workers=4))
    print(f"{name:8s} {time.perf_counter() - t0:5.1f} s")

report = SuiteReport.from_records(records)
print()
print(report.table())
print()
print(report.causes_table())

# %% per-stage cost of the full pipeline
print()
print(report.latency_table("full"))
