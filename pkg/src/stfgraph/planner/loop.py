"""Planning backends and the verify-or-replan step."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..config import DEFAULT, PipelineConfig
from ..cstg import Cstg, append_event
from ..directive import ActionDirective, Pose6DoFAction
from ..errors import ReplanBudgetExhausted, UnknownObject
from ..geometry import Vec3
from ..goal import GoalSpec
from .instantiate import instantiate_action
from .oracle import oracle_directive
from .verify import VerificationReport, verify_preconditions


class OracleBackend:
    name = "oracle"

    def __init__(self, cfg: PipelineConfig = DEFAULT):
        self.cfg = cfg

    def propose(self, g: Cstg, obs, goal: GoalSpec, feedback=(), rejected=()) -> ActionDirective:
        return oracle_directive(g, goal, self.cfg, rejected)


class ScriptedBackend:
    """Replays a fixed list of directives, then defers to ``fallback`` (or says done)."""

    name = "scripted"

    def __init__(self, directives, fallback=None):
        self.queue = [d if isinstance(d, ActionDirective) else ActionDirective.from_dict(d) for d in directives]
        self.fallback = fallback

    @classmethod
    def load(cls, path, fallback=None) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text())
        if isinstance(data, dict):
            data = data["directives"]
        return cls(data, fallback)

    def propose(self, g, obs, goal, feedback=(), rejected=()) -> ActionDirective:
        if self.queue:
            return self.queue.pop(0)
        if self.fallback is not None:
            return self.fallback.propose(g, obs, goal, feedback, rejected)
        return ActionDirective("done")


class RemoteBackend:
    name = "remote"

    def __init__(self, endpoint=None, cfg: PipelineConfig = DEFAULT, session=None):
        from .remote import EndpointConfig

        self.endpoint = endpoint or EndpointConfig.from_env()
        self.cfg = cfg
        self.session = session
        self.last_prompt = None

    def propose(self, g, obs, goal, feedback=(), rejected=()) -> ActionDirective:
        from .prompt import assemble_prompt
        from .remote import remote_directive

        self.last_prompt = assemble_prompt(g, obs, goal, self.cfg, feedback)
        return remote_directive(self.last_prompt, self.endpoint, self.session)


@dataclass
class StepOutcome:
    graph: Cstg  # including any precondition_violation events
    directive: ActionDirective
    report: VerificationReport
    action: Optional[Pose6DoFAction]
    violations: list = field(default_factory=list)  # event fields, for replay
    timings: dict = field(default_factory=dict)

    @property
    def replans(self) -> int:
        return len(self.violations)


def step_loop(g: Cstg, obs, goal: GoalSpec, backend, cfg: PipelineConfig = DEFAULT) -> StepOutcome:
    """Ask the backend for a directive until one verifies (at most
    ``1 + max_replans`` proposals); each rejection is logged as a
    precondition_violation and fed back to the backend."""
    feedback, rejected, violations = [], [], []
    timings = {"plan": 0.0, "verify": 0.0, "instantiate": 0.0}
    for _ in range(cfg.max_replans + 1):
        t0 = time.perf_counter()
        d = backend.propose(g, obs, goal, tuple(feedback), tuple(rejected))
        t1 = time.perf_counter()
        try:
            report = verify_preconditions(g, d, cfg)
        except UnknownObject:
            report = VerificationReport(False, ((f"exists({d.subject_id})", f"{d.subject_id} is not a known object"),),
                                        g.current_step)
        t2 = time.perf_counter()
        timings["plan"] += t1 - t0
        timings["verify"] += t2 - t1
        if report.passed:
            action = instantiate_action(d, g, cfg)
            timings["instantiate"] = time.perf_counter() - t2
            return StepOutcome(g, d, report, action, violations, timings)
        known = d.subject_id in g.nodes
        v = {"subject": d.subject_id if known else "none",
             "location": list(g.node(d.subject_id).centroid) if known else [0.0, 0.0, 0.0],
             "action": f"t{g.current_step}:{d.describe()}",
             "detail": f"{d.describe()}: {report.feedback()}"}
        g = apply_violation(g, v)
        violations.append(v)
        feedback.append(v["detail"])
        rejected.append(d)
    err = ReplanBudgetExhausted(f"no valid directive after {cfg.max_replans} replans: {feedback[-1]}")
    err.graph, err.violations, err.timings = g, violations, timings
    raise err


def apply_violation(g: Cstg, v: dict) -> Cstg:
    return append_event(g, "precondition_violation", v["subject"], Vec3.of(v["location"]), "agent_action",
                        v["action"], v["detail"])
