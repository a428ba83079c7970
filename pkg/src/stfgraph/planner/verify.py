"""Precondition verification of directives against the scene graph."""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..config import DEFAULT, PipelineConfig
from ..cstg import OCCLUDED, Cstg, supported
from ..directive import ActionDirective
from ..errors import UnknownObject
from ..geometry import Vec3
from ..sim.world import CUP_WALL
from .scene import blockers_at, held_id, in_workspace, node_box, overlap_xy, support_fraction_at

MANDATORY = {
    "pick": ("exists(S)", "unoccluded(S)", "hand_empty()", "clear_top(S)", "reachable(S)"),
    "place_on": ("exists(S)", "exists(T)", "holding(S)", "unoccluded(T)", "clear_top(T)", "stable(S,T)",
                 "reachable(T)"),
    "place_at": ("exists(S)", "holding(S)", "reachable(T)", "free_at(S,T)", "stable(S,T)"),
    "cover_with": ("exists(S)", "exists(T)", "holding(S)", "unoccluded(T)", "clear_top(T)", "fits_over(S,T)",
                   "reachable(T)"),
    "uncover": ("exists(S)", "hand_empty()", "clear_top(S)", "reachable(T)", "free_at(S,T)"),
    "done": (),
}
_CALL = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


@dataclass(frozen=True)
class VerificationReport:
    passed: bool
    violated: tuple  # ((predicate, explanation), ...)
    checked_against_step: int

    def __post_init__(self):
        if self.passed != (len(self.violated) == 0):
            raise ValueError("passed must equal 'no violations'")

    def feedback(self) -> str:
        return "; ".join(f"{p}: {why}" for p, why in self.violated)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "violated": [list(v) for v in self.violated],
                "step": self.checked_against_step}


def _bind(template: str, d: ActionDirective) -> str:
    tgt = d.target
    if isinstance(tgt, Vec3):
        tgt = "(" + ",".join(f"{v:.4f}" for v in tgt) + ")"
    return template.replace("S", d.subject_id or "").replace("T", str(tgt))


def verify_preconditions(g: Cstg, d: ActionDirective, cfg: PipelineConfig = DEFAULT) -> VerificationReport:
    """Evaluate the verb's mandatory predicates plus any the directive declares."""
    if d.verb != "done" and d.subject_id not in g.nodes:
        raise UnknownObject(d.subject_id)
    checks = [(_bind(p, d), p) for p in MANDATORY[d.verb]]
    seen = {c for c, _ in checks}
    for p in d.preconditions:
        if p not in seen:
            checks.append((p, None))
            seen.add(p)
    violated = []
    for text, template in checks:
        why = _evaluate(g, d, text, template, cfg)
        if why:
            violated.append((text, why))
    return VerificationReport(not violated, tuple(violated), g.current_step)


def _evaluate(g: Cstg, d: ActionDirective, text: str, template, cfg: PipelineConfig):
    """Explanation of the failure, or None when the predicate holds."""
    if template is not None:
        name = template.split("(")[0]
        args = [d.subject_id if a == "S" else d.target for a in template[len(name) + 1:-1].split(",") if a]
    else:
        m = _CALL.match(text)
        if not m:
            return "unparseable predicate"
        name = m.group(1)
        args = [a.strip() for a in m.group(2).split(",") if a.strip()]
    fn = PREDICATES.get(name)
    if fn is None:
        return f"unknown predicate {name!r}"
    try:
        return fn(g, cfg, *args)
    except TypeError:
        return f"wrong number of arguments for {name}"


def _known(g, x):
    if isinstance(x, str) and x in g.nodes:
        return None
    return f"{x} is not a known object"


def p_exists(g, cfg, x):
    return _known(g, x)


def p_visible_or_located(g, cfg, x):
    return _known(g, x)


def p_unoccluded(g, cfg, x):
    if _known(g, x):
        return _known(g, x)
    n = g.node(x)
    if n.visibility == OCCLUDED:
        by = n.occluder_id or "an unknown occluder"
        return f"occluded, uncover first (hidden by {by})"
    return None


def p_hand_empty(g, cfg):
    h = held_id(g, cfg)
    return None if h is None else f"gripper already holds {h}"


def p_holding(g, cfg, x):
    h = held_id(g, cfg)
    return None if h == x else f"gripper holds {h or 'nothing'}, not {x}"


def p_clear_top(g, cfg, x):
    if _known(g, x):
        return _known(g, x)
    on = supported(g, x)
    return None if not on else f"{', '.join(on)} rests on {x}"


def p_reachable(g, cfg, x):
    if isinstance(x, str):
        if _known(g, x):
            return _known(g, x)
        p = g.node(x).centroid
    else:
        p = x
    return None if in_workspace(p, cfg) else "outside the workspace"


def p_stable(g, cfg, s, t):
    if _known(g, s):
        return _known(g, s)
    _, half = node_box(g.node(s))
    if isinstance(t, str):
        if _known(g, t):
            return _known(g, t)
        tc, th = node_box(g.node(t))
        frac = overlap_xy(tc.x, tc.y, half.x, half.y, tc.x, tc.y, th.x, th.y) / (4 * half.x * half.y)
    else:
        frac = support_fraction_at(g, t.x, t.y, t.z - half.z, half, exclude=(s,), cfg=cfg)
    if frac + 1e-9 < cfg.f_stab:
        return f"only {frac:.2f} of the footprint supported (needs {cfg.f_stab:.2f})"
    return None


def p_free_at(g, cfg, s, t):
    if _known(g, s):
        return _known(g, s)
    _, half = node_box(g.node(s))
    hit = blockers_at(g, Vec3.of(t), half, exclude=(s,))
    return None if not hit else f"destination occupied by {', '.join(hit)}"


def p_fits_over(g, cfg, s, t):
    for x in (s, t):
        if _known(g, x):
            return _known(g, x)
    _, hs = node_box(g.node(s))
    _, ht = node_box(g.node(t))
    if hs.x - CUP_WALL > ht.x and hs.y - CUP_WALL > ht.y and 2 * hs.z - CUP_WALL > 2 * ht.z:
        return None
    return f"{s} is too small to cover {t}"


PREDICATES = {
    "exists": p_exists, "visible_or_located": p_visible_or_located, "unoccluded": p_unoccluded,
    "hand_empty": p_hand_empty, "holding": p_holding, "clear_top": p_clear_top, "reachable": p_reachable,
    "stable": p_stable, "free_at": p_free_at, "fits_over": p_fits_over,
}
