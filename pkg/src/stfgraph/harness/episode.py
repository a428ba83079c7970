"""Closed-loop episodes: perceive, tokenise, update the graph, plan, verify,
instantiate, act.  Every episode yields an :class:`EpisodeRecord`.

Record format (``episode/1``), JSON lines::

    {"format": "episode/1", "task": ..., "seed": ..., "backend": ..., "config": {...},
     "config_hash": ...}                                   # header
    {"step": t, "obs": digest, "tokens": [...], "executed": directive | null,
     "graph": sha256 of the graph snapshot after this step, "events": [...new events],
     "violations": [...], "prompt": hash | null, "directive": ..., "report": ...,
     "action": ..., "outcome": ..., "times": {stage: seconds}}   # one per step
    {"final": true, "success": bool, "cause": null | bucket, "reason": text,
     "steps": n, "snapshot": graph snapshot}                      # footer

Failure causes fall in exactly one bucket: parsing, placement, grasp, motion, planning.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

from ..config import DEFAULT, PipelineConfig
from ..cstg import Cstg, empty_graph, update_graph
from ..errors import (
    RemoteError,
    ReplanBudgetExhausted,
    StfGraphError,
    UnresolvedTarget,
    UnsatisfiableGoal,
)
from ..planner.loop import OracleBackend, RemoteBackend, ScriptedBackend, step_loop
from ..planner.subgoals import checker
from ..sim.render import RenderConfig, render
from ..sim.tasks import TaskSpec, check_success, resolve_task
from ..sim.world import apply_action
from .perception import perceive

FORMAT = "episode/1"
CAUSES = ("parsing", "placement", "grasp", "motion", "planning")
STAGES = ("perceive", "tokens", "graph", "plan", "verify", "instantiate", "apply")
_OUTCOME_CAUSE = {"grasp_miss": "grasp", "toppled": "placement", "invalid": "motion"}


def config_hash(cfg: PipelineConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def graph_hash(g: Cstg) -> str:
    return hashlib.sha256(g.snapshot_json().encode()).hexdigest()[:16]


@dataclass
class EpisodeRecord:
    header: dict
    steps: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return bool(self.final.get("success"))

    @property
    def cause(self) -> Optional[str]:
        return self.final.get("cause")

    @property
    def task(self) -> str:
        return self.header["task"]

    def config(self) -> PipelineConfig:
        return PipelineConfig.from_dict(self.header["config"])

    def lines(self, with_times: bool = True) -> list:
        out = [json.dumps(self.header, sort_keys=True)]
        for s in self.steps:
            s = s if with_times else {k: v for k, v in s.items() if k != "times"}
            out.append(json.dumps(s, sort_keys=True))
        out.append(json.dumps(self.final, sort_keys=True))
        return out

    def to_jsonl(self, with_times: bool = True) -> str:
        return "\n".join(self.lines(with_times)) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text: str) -> "EpisodeRecord":
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        if not rows or rows[0].get("format") != FORMAT:
            raise ValueError(f"not an {FORMAT} record")
        if not rows[-1].get("final"):
            raise ValueError("record has no footer line")
        return cls(rows[0], rows[1:-1], rows[-1])

    @classmethod
    def load(cls, path) -> "EpisodeRecord":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


def make_backend(spec, cfg: PipelineConfig = DEFAULT):
    """``"oracle"``, ``"remote"``, ``"scripted:<file>"`` or a ready backend object."""
    if not isinstance(spec, str):
        return spec
    if spec == "oracle":
        return OracleBackend(cfg)
    if spec == "remote":
        return RemoteBackend(cfg=cfg)
    if spec.startswith("scripted:"):
        return ScriptedBackend.load(spec.split(":", 1)[1])
    raise ValueError(f"unknown backend {spec!r}")


def _sim_subject(w, node) -> Optional[str]:
    """Simulator object a graph node refers to: same descriptor, nearest center."""
    cands = [o for _, o in sorted(w.objects.items()) if o.descriptor == node.descriptor]
    if not cands:
        return None
    return min(cands, key=lambda o: math.dist(o.center, node.centroid)).object_id


def run_episode(task, seed: int = 0, cfg: PipelineConfig = DEFAULT, backend="oracle",
                render_cfg: RenderConfig = None, world_hook=None) -> EpisodeRecord:
    """Run one episode to done, failure or the task horizon.

    ``world_hook(t, world) -> world`` may inject external disturbances before
    each observation (used by tests).
    """
    spec = resolve_task(task) if isinstance(task, str) else task
    spec: TaskSpec = spec.variant(seed)
    rc = render_cfg or RenderConfig(sigma_noise=cfg.sigma_noise)
    be = make_backend(backend, cfg)
    label = backend if isinstance(backend, str) else getattr(be, "name", type(be).__name__)
    header = {"format": FORMAT, "task": spec.name, "seed": seed, "backend": label,
              "config": cfg.to_dict(), "config_hash": config_hash(cfg), "horizon": spec.horizon}
    rec = EpisodeRecord(header)
    check = checker(cfg)
    w = spec.initial_state()
    g = empty_graph(cfg)
    executed = None
    success, cause, reason = False, "planning", "horizon exhausted"

    for t in range(spec.horizon):
        if world_hook is not None:
            w = world_hook(t, w)
        times = dict.fromkeys(STAGES, 0.0)
        t0 = time.perf_counter()
        obs = render(w, rc)
        t1 = time.perf_counter()
        tokens = perceive(obs, t, cfg)
        t2 = time.perf_counter()
        n_before = len(g.log)
        g = update_graph(g, tokens, executed, cfg, check)
        t3 = time.perf_counter()
        times.update(perceive=t1 - t0, tokens=t2 - t1, graph=t3 - t2)
        step = {"step": t, "obs": obs.digest(), "tokens": [tk.to_dict() for tk in tokens],
                "executed": executed.to_dict() if executed is not None else None,
                "violations": [], "prompt": None, "directive": None, "report": None,
                "action": None, "outcome": None}
        rec.steps.append(step)

        failure = None
        try:
            out = step_loop(g, obs, spec.goal, be, cfg)
        except ReplanBudgetExhausted as e:
            g = e.graph
            step["violations"] = e.violations
            failure = ("planning", str(e))
        except (UnresolvedTarget, UnsatisfiableGoal, RemoteError) as e:
            failure = ("planning", f"{type(e).__name__}: {e}")
        except StfGraphError as e:
            failure = ("motion", f"{type(e).__name__}: {e}")
        prompt = getattr(be, "last_prompt", None)
        if prompt is not None:
            step["prompt"] = prompt.digest()
        if failure is not None:
            step["graph"] = graph_hash(g)
            step["events"] = [e.to_dict() for e in g.log.events[n_before:]]
            step["times"] = times
            cause, reason = failure
            break

        g = out.graph
        for k in ("plan", "verify", "instantiate"):
            times[k] = out.timings.get(k, 0.0)
        step.update(graph=graph_hash(g), events=[e.to_dict() for e in g.log.events[n_before:]],
                    violations=out.violations, directive=out.directive.to_dict(), report=out.report.to_dict(),
                    action=out.action.to_dict() if out.action is not None else None)
        if out.directive.verb == "done":
            step["times"] = times
            success = check_success(w, spec, cfg)
            cause, reason = (None, "") if success else ("planning", "declared done but the goal does not hold")
            break
        if not out.report.passed:  # safety gate: never act on a failed report
            raise AssertionError("action instantiated from a failed verification report")
        sid = _sim_subject(w, g.node(out.directive.subject_id))
        if sid is None:
            step["times"] = times
            cause, reason = "parsing", f"no object in the scene matches {out.directive.subject_id}"
            break
        t4 = time.perf_counter()
        w, outcome = apply_action(w, out.action, sid, cfg)
        times["apply"] = time.perf_counter() - t4
        step["outcome"] = outcome
        step["times"] = times
        if outcome != "ok":
            cause, reason = _OUTCOME_CAUSE[outcome], f"{out.directive.describe()} -> {outcome}"
            break
        executed = out.directive

    rec.final = {"final": True, "success": success, "cause": None if success else cause,
                 "reason": "" if success else reason, "steps": len(rec.steps),
                 "marks": sorted(w.marks), "snapshot": g.to_snapshot()}
    return rec
