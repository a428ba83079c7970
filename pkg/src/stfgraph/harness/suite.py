"""Batches of episodes and the report computed from their records."""
from __future__ import annotations

import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..config import DEFAULT, PipelineConfig
from .episode import CAUSES, STAGES, EpisodeRecord, run_episode


def arm_label(cfg: PipelineConfig) -> str:
    flags = [name for name, on in (("no-stf", cfg.disable_stf_geometry), ("no-cstg", cfg.disable_cstg_memory)) if on]
    return "+".join(flags) or "full"


def arm_of(rec: EpisodeRecord) -> str:
    return arm_label(rec.config())


@dataclass
class RunConfig:
    tasks: tuple
    seeds: tuple = tuple(range(25))
    backend: str = "oracle"
    pipeline: PipelineConfig = DEFAULT
    out_dir: str = None
    workers: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.tasks:
            raise ValueError("at least one task is required")

    def jobs(self) -> list:
        return [(task, seed) for task in self.tasks for seed in self.seeds]


def episode_filename(task: str, arm: str, seed: int) -> str:
    return f"{Path(task).stem}-{arm}-s{seed}.jsonl"


def _run_one(args):
    task, seed, cfg, backend, out_dir = args
    rec = run_episode(task, seed, cfg, backend)
    if out_dir:
        rec.save(Path(out_dir) / episode_filename(task, arm_label(cfg), seed))
    return rec


def run_episodes(rc: RunConfig) -> list:
    """Records in job order; episodes share nothing, so a worker pool is safe."""
    if rc.out_dir:
        Path(rc.out_dir).mkdir(parents=True, exist_ok=True)
    args = [(task, seed, rc.pipeline, rc.backend, rc.out_dir) for task, seed in rc.jobs()]
    if rc.workers > 1:
        with ProcessPoolExecutor(rc.workers) as pool:
            return list(pool.map(_run_one, args))
    return [_run_one(a) for a in args]


def run_suite(rc: RunConfig) -> "SuiteReport":
    return SuiteReport.from_records(run_episodes(rc))


def load_records(paths) -> list:
    """Records from files and directories (``*.jsonl`` inside), sorted by path."""
    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.jsonl")) if p.is_dir() else [p])
    return [EpisodeRecord.load(f) for f in sorted(files)]


@dataclass
class SuiteReport:
    # arm -> task -> {"successes", "episodes", "rate", "causes": {bucket: n}}
    results: dict = field(default_factory=dict)
    # arm -> stage -> step index -> {"mean", "max", "n"} (seconds)
    latency: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records) -> "SuiteReport":
        results, samples = {}, {}
        for rec in records:
            arm = arm_of(rec)
            row = results.setdefault(arm, {}).setdefault(
                rec.task, {"successes": 0, "episodes": 0, "causes": dict.fromkeys(CAUSES, 0)})
            row["episodes"] += 1
            if rec.success:
                row["successes"] += 1
            else:
                row["causes"][rec.cause] += 1
            for s in rec.steps:
                for stage, secs in s.get("times", {}).items():
                    samples.setdefault(arm, {}).setdefault(stage, {}).setdefault(s["step"], []).append(secs)
        for arm in results.values():
            for row in arm.values():
                row["rate"] = row["successes"] / row["episodes"]
        latency = {
            arm: {stage: {str(t): {"mean": statistics.fmean(v), "max": max(v), "n": len(v)}
                          for t, v in sorted(by_step.items())}
                  for stage, by_step in sorted(stages.items())}
            for arm, stages in sorted(samples.items())
        }
        results = {arm: dict(sorted(rows.items())) for arm, rows in sorted(results.items())}
        return cls(results, latency)

    def rate(self, task: str, arm: str = "full") -> float:
        return self.results[arm][task]["rate"]

    def to_dict(self) -> dict:
        return {"format": "suite/1", "results": self.results, "latency": self.latency}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def table(self) -> str:
        """Success counts per task, one column per ablation arm."""
        arms = list(self.results)
        tasks = sorted({t for rows in self.results.values() for t in rows})
        width = max([len(t) for t in tasks] + [4])
        lines = ["task".ljust(width) + "".join(f"  {a:>14}" for a in arms)]
        for t in tasks:
            cells = []
            for a in arms:
                row = self.results[a].get(t)
                cells.append(f"  {str(row['successes']) + '/' + str(row['episodes']) if row else '-':>14}")
            lines.append(t.ljust(width) + "".join(cells))
        return "\n".join(lines)

    def latency_table(self, arm: str = None) -> str:
        """Mean per-stage wall time (ms) by step index."""
        arm = arm or next(iter(self.latency), None)
        if arm is None:
            return "no timing data"
        stages = [s for s in STAGES if s in self.latency[arm]]
        steps = sorted({int(t) for s in stages for t in self.latency[arm][s]})
        lines = [f"[{arm}] step" + "".join(f" {s:>11}" for s in stages)]
        for t in steps:
            cells = [self.latency[arm][s].get(str(t), {}).get("mean") for s in stages]
            lines.append(f"{'':{len(arm) + 3}}{t:>4}" + "".join(
                f" {c * 1e3:>11.3f}" if c is not None else f" {'-':>11}" for c in cells))
        return "\n".join(lines)

    def causes_table(self) -> str:
        lines = ["failures by cause: " + ", ".join(CAUSES)]
        for arm, rows in self.results.items():
            for t, row in rows.items():
                if row["successes"] < row["episodes"]:
                    lines.append(f"{arm} {t}: " + ", ".join(f"{c}={n}" for c, n in row["causes"].items() if n))
        return "\n".join(lines)
