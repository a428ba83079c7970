"""Re-derive the graph of a recorded episode from its token stream."""
from __future__ import annotations

import json

from ..cstg import Cstg, empty_graph, update_graph
from ..directive import ActionDirective
from ..errors import ReplayDivergence
from ..planner.loop import apply_violation
from ..planner.subgoals import checker
from ..stf import StfToken
from .episode import EpisodeRecord, graph_hash


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def replay_graph(rec: EpisodeRecord, upto: int = None, verify: bool = True) -> Cstg:
    """Graph after step ``upto`` (default: the last step), rebuilt from tokens,
    executed directives and recorded violations.  With ``verify``, every step's
    graph hash and new events are checked against the record."""
    cfg = rec.config()
    check = checker(cfg)
    g = empty_graph(cfg)
    for i, s in enumerate(rec.steps):
        t = s.get("step")
        if t != i:
            raise ReplayDivergence(i, f"steps not contiguous (found step {t})")
        try:
            tokens = [StfToken.from_dict(d) for d in s["tokens"]]
            executed = ActionDirective.from_dict(s["executed"]) if s["executed"] else None
            n = len(g.log)
            g = update_graph(g, tokens, executed, cfg, check)
            for v in s["violations"]:
                g = apply_violation(g, v)
        except ReplayDivergence:
            raise
        except Exception as e:  # a tampered token or directive that no longer parses
            raise ReplayDivergence(t, f"{type(e).__name__}: {e}") from e
        if verify:
            events = [e.to_dict() for e in g.log.events[n:]]
            if _canon(events) != _canon(s.get("events")):
                raise ReplayDivergence(t, "event log differs")
            if graph_hash(g) != s.get("graph"):
                raise ReplayDivergence(t, "graph snapshot differs")
            report = s.get("report")
            if s.get("action") is not None and not (report and report.get("passed")):
                raise ReplayDivergence(t, "action recorded without a passing verification report")
        if upto is not None and t >= upto:
            return g
    return g


def replay(rec: EpisodeRecord) -> bool:
    """True if the record reproduces exactly; raises ReplayDivergence otherwise."""
    g = replay_graph(rec)
    if _canon(g.to_snapshot()) != _canon(rec.final.get("snapshot")):
        raise ReplayDivergence(len(rec.steps) - 1, "final snapshot differs")
    return True
