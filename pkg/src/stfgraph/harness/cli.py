"""Command line: ``stfgraph run | report | replay | export-graph``.

Exit codes: 0 success, 1 task failure (or replay divergence), 2 configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..config import DEFAULT
from ..errors import ReplayDivergence
from ..sim.tasks import SUITE_8, bundled_names, resolve_task
from .episode import EpisodeRecord
from .replay import replay, replay_graph
from .suite import RunConfig, SuiteReport, load_records, run_episodes

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def parse_seeds(text: str) -> tuple:
    """``"0-24"``, ``"1,3,5"`` or mixtures like ``"0-4,10"``."""
    seeds = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                seeds.extend(range(int(lo), int(hi) + 1))
            elif part:
                seeds.append(int(part))
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError("at least one seed is required")
    return tuple(seeds)


def _pipeline(args):
    kw = {}
    if args.k is not None:
        if args.k < 1:
            raise ConfigError("--k must be at least 1")
        kw["window_k"] = args.k
    if args.iou_threshold is not None:
        if not 0.0 <= args.iou_threshold <= 1.0:
            raise ConfigError("--iou-threshold must lie in [0, 1]")
        kw["iou_threshold"] = args.iou_threshold
    for flag in args.ablate or ():
        kw["disable_stf_geometry" if flag == "stf" else "disable_cstg_memory"] = True
    return DEFAULT.with_(**kw)


def _backend(args):
    if args.backend in ("oracle", "remote"):
        if args.backend == "remote":
            from ..planner.remote import EndpointConfig

            try:
                EndpointConfig.from_env()
            except ValueError as e:
                raise ConfigError(str(e)) from None
        return args.backend
    if args.backend.startswith("scripted:"):
        path = args.backend.split(":", 1)[1]
        if not Path(path).is_file():
            raise ConfigError(f"script file {path!r} not found")
        return args.backend
    raise ConfigError(f"unknown backend {args.backend!r} (oracle, remote or scripted:<file>)")


def cmd_run(args) -> int:
    tasks = args.task or list(SUITE_8)
    for t in tasks:
        try:
            resolve_task(t)
        except (ValueError, OSError, KeyError) as e:
            raise ConfigError(str(e)) from None
    rc = RunConfig(tuple(tasks), parse_seeds(args.seeds), _backend(args), _pipeline(args), args.out, args.workers)
    records = run_episodes(rc)
    for rec in records:
        status = "ok" if rec.success else f"FAIL ({rec.cause}: {rec.final['reason']})"
        print(f"{rec.task} seed {rec.header['seed']}: {status} in {len(rec.steps)} steps")
    report = SuiteReport.from_records(records)
    print()
    print(report.table())
    if args.out:
        (Path(args.out) / "report.json").write_text(report.to_json())
    return EXIT_OK if all(r.success for r in records) else EXIT_FAIL


def cmd_report(args) -> int:
    records = load_records(args.paths)
    if not records:
        raise ConfigError("no episode records found")
    report = SuiteReport.from_records(records)
    if args.json:
        print(report.to_json())
        return EXIT_OK
    print(report.table())
    print()
    print(report.causes_table())
    if args.latency:
        print()
        for arm in report.latency:
            print(report.latency_table(arm))
    return EXIT_OK


def cmd_replay(args) -> int:
    code = EXIT_OK
    files = _files(args.paths)
    if not files:
        raise ConfigError("no episode records found")
    for path in files:
        rec = EpisodeRecord.load(path)
        try:
            replay(rec)
            print(f"{path}: ok ({len(rec.steps)} steps)")
        except ReplayDivergence as e:
            print(f"{path}: {e}")
            code = EXIT_FAIL
    return code


def cmd_export_graph(args) -> int:
    rec = EpisodeRecord.load(args.record)
    if args.step is None:
        snap = rec.final["snapshot"]
    else:
        if not 0 <= args.step < len(rec.steps):
            raise ConfigError(f"step {args.step} outside 0..{len(rec.steps) - 1}")
        snap = replay_graph(rec, upto=args.step).to_snapshot()
    text = json.dumps(snap, sort_keys=True, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def _files(paths) -> list:
    out = []
    for p in map(Path, paths):
        out.extend(sorted(p.glob("*.jsonl")) if p.is_dir() else [p])
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stfgraph", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run episodes and print success counts")
    r.add_argument("--task", action="append", help=f"bundled name or task file (repeatable; default: the 8-task suite). "
                                                  f"Bundled: {', '.join(bundled_names())}")
    r.add_argument("--backend", default="oracle", help="oracle, remote or scripted:<file>")
    r.add_argument("--seed", "--seeds", dest="seeds", default="0", help="seed list, e.g. 0-24 or 1,2,3")
    r.add_argument("--ablate", action="append", choices=("stf", "cstg"), help="disable a component (repeatable)")
    r.add_argument("--k", type=int, help="token window length")
    r.add_argument("--iou-threshold", type=float, help="patch selection threshold")
    r.add_argument("--out", help="directory for episode records and report.json")
    r.add_argument("--workers", type=int, default=1, help="parallel episode workers")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="summarize episode records")
    rep.add_argument("paths", nargs="+", help="record files or directories")
    rep.add_argument("--json", action="store_true", help="print the full report as JSON")
    rep.add_argument("--latency", action="store_true", help="include per-step stage timings")
    rep.set_defaults(func=cmd_report)

    rp = sub.add_parser("replay", help="re-derive graphs and events from records and compare")
    rp.add_argument("paths", nargs="+")
    rp.set_defaults(func=cmd_replay)

    ex = sub.add_parser("export-graph", help="write a recorded episode's scene graph as cstg/1 JSON")
    ex.add_argument("record")
    ex.add_argument("--step", type=int, help="graph after this step (default: final)")
    ex.add_argument("--out", help="output file (default: stdout)")
    ex.set_defaults(func=cmd_export_graph)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as e:
        print(f"stfgraph: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
