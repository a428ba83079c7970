"""Rule-based planning backend.

The oracle is a pure function of (graph, goal): it re-derives what to do
next from the current graph and memory log every step.  It returns an ordered
list of candidate directives; when verification rejects one, the caller asks
again with that directive excluded, so repeated rejections walk down the list
and terminate.

Goal scenes are built bottom-up in topological order of their support
relations.  Instructions are split into clauses from a small grammar::

    hide the <X> under the <Y>
    move the <Z> aside
    unstack the tower
    restore the original state | restack it in the original order

and each clause is closed by a subgoal predicate (see ``subgoals``).
"""
from __future__ import annotations

import math
import re

from ..config import DEFAULT, PipelineConfig
from ..cstg import OCCLUDED, VISIBLE, Cstg, first_recorded_pose, supporters
from ..directive import ActionDirective
from ..errors import UnresolvedTarget, UnsatisfiableGoal
from ..geometry import Vec3
from ..goal import GoalSpec
from .scene import blockers_at, held_id, is_clear, node_box, on_table, stack_top, support_fraction_at
from .subgoals import at_note, subgoal_holds

STAGING_XS = tuple(round(-0.38 + 0.01 * i, 2) for i in range(77))
STAGING_YS = (0.0, 0.12, -0.12)
CLEARANCE = 0.03
MAX_ALTERNATIVES = 4

_CLAUSES = (
    ("hide", re.compile(r"^hide the (.+?) under the (.+)$")),
    ("aside", re.compile(r"^move the (.+?) aside$")),
    ("flat", re.compile(r"^unstack the tower$")),
    ("restore", re.compile(r"^(?:restore the original state|restack it in the original order)$")),
)


def parse_instruction(text: str) -> list:
    """Clauses as (kind, descriptor args...) tuples, in order."""
    text = text.strip().lower().rstrip(".")
    parts = [p.strip() for p in re.split(r",\s*then\s+|,\s*|\s+then\s+", text) if p.strip()]
    out = []
    for part in parts:
        for kind, pat in _CLAUSES:
            m = pat.match(part)
            if m:
                out.append((kind,) + m.groups())
                break
        else:
            raise UnsatisfiableGoal(f"cannot parse instruction clause {part!r}")
    return out


def oracle_directive(g: Cstg, goal: GoalSpec, cfg: PipelineConfig = DEFAULT, rejected=()) -> ActionDirective:
    """First candidate not in ``rejected``."""
    for d in oracle_candidates(g, goal, cfg):
        if d not in rejected:
            return d
    raise UnsatisfiableGoal("every candidate directive was rejected")


def oracle_candidates(g: Cstg, goal: GoalSpec, cfg: PipelineConfig = DEFAULT) -> list:
    if goal.kind == "goal_image":
        return _scene_candidates(g, goal, cfg)
    return _instruction_candidates(g, goal.instruction, cfg)


# ---------------------------------------------------------------- helpers

def _node_for(g: Cstg, descriptor: str) -> str:
    nodes = g.by_descriptor(descriptor)
    if not nodes:
        raise UnresolvedTarget(f"no object matching {descriptor!r}")
    visible = [n for n in nodes if n.visibility == VISIBLE]
    return (visible or nodes)[0].object_id


def _separated(x, y, half, c, h) -> bool:
    return abs(x - c.x) >= half.x + h.x + CLEARANCE or abs(y - c.y) >= half.y + h.y + CLEARANCE


def staging_spots(g: Cstg, subject: str, reserved=(), cfg: PipelineConfig = DEFAULT) -> list:
    """Free table spots for ``subject``, nearest first, front row before the back rows.

    ``reserved`` holds (center, half extents) boxes to keep clear as well.
    """
    c, half = node_box(g.node(subject))
    boxes = [node_box(n) for oid, n in sorted(g.nodes.items()) if oid != subject]
    boxes.extend(reserved)
    out = []
    for y in STAGING_YS:
        row = []
        for x in STAGING_XS:
            if x - half.x < cfg.workspace_lo[0] or x + half.x > cfg.workspace_hi[0]:
                continue
            if all(_separated(x, y, half, bc, bh) for bc, bh in boxes):
                row.append(Vec3(x, y, half.z))
        row.sort(key=lambda p: (abs(p.x - c.x), p.x))
        out.extend(row)
    return out


def _aside(g: Cstg, subject: str, note: str, reserved, cfg) -> list:
    spots = staging_spots(g, subject, reserved, cfg)[:MAX_ALTERNATIVES]
    if not spots:
        raise UnsatisfiableGoal(f"no free table spot for {subject}")
    return [ActionDirective("place_at", subject, p, (), note) for p in spots]


def _pick(oid: str, note: str) -> ActionDirective:
    return ActionDirective("pick", oid, None, (f"clear_top({oid})", f"reachable({oid})"), note)


def _uncover(g: Cstg, cover: str, note: str, reserved, cfg, home=None) -> list:
    out = []
    if home is not None and _place_ok(g, cover, home, cfg):
        out.append(ActionDirective("uncover", cover, home, (), note))
    out.extend(ActionDirective("uncover", cover, p, (), note)
               for p in staging_spots(g, cover, reserved, cfg)[:MAX_ALTERNATIVES])
    if not out:
        raise UnsatisfiableGoal(f"nowhere to set {cover} down")
    return out


def _place_ok(g: Cstg, oid: str, p: Vec3, cfg) -> bool:
    _, half = node_box(g.node(oid))
    if blockers_at(g, p, half, exclude=(oid,)):
        return False
    return support_fraction_at(g, p.x, p.y, p.z - half.z, half, exclude=(oid,), cfg=cfg) + 1e-9 >= cfg.f_stab


def _clear_path(g: Cstg, oid: str, note: str, cfg):
    """Directive that gets ``oid`` one step closer to being pickable, or None if it is."""
    n = g.node(oid)
    if n.visibility == OCCLUDED:
        if n.occluder_id is None:
            raise UnresolvedTarget(f"{oid} is hidden by an unknown object")
        return "uncover", n.occluder_id
    if not is_clear(g, oid):
        return "pick", stack_top(g, oid)
    return None


# ---------------------------------------------------------------- goal scenes

def _topological(goal: GoalSpec) -> list:
    entries = list(goal.goal_scene)
    names = {e.descriptor for e in entries}
    deps = {e.descriptor: [s for s in e.supports if s in names] for e in entries}
    order, state = [], {}

    def visit(d, path):
        if state.get(d) == "done":
            return
        if state.get(d) == "active":
            raise UnsatisfiableGoal("cyclic support relations: " + " -> ".join(path + [d]))
        state[d] = "active"
        for s in deps[d]:
            visit(s, path + [d])
        state[d] = "done"
        order.append(d)

    for e in entries:
        visit(e.descriptor, [])
    by_name = {e.descriptor: e for e in entries}
    return [by_name[d] for d in order]


def _entry_ok(g: Cstg, e, oid: str, held, cfg) -> bool:
    n = g.node(oid)
    if n.visibility != VISIBLE or oid == held or math.dist(n.centroid, e.target) > cfg.tol_pos:
        return False
    sups = supporters(g, oid)
    for s in e.supports:
        if s == "table":
            if on_table(g, oid, cfg):
                return True
        elif any(g.node(x).descriptor == s for x in sups):
            return True
    return False


def _scene_candidates(g: Cstg, goal: GoalSpec, cfg) -> list:
    entries = _topological(goal)
    held = held_id(g, cfg)
    ids = {e.descriptor: _node_for(g, e.descriptor) for e in entries}
    pending = [e for e in entries if not _entry_ok(g, e, ids[e.descriptor], held, cfg)]
    reserved = []
    for e in pending:
        _, half = node_box(g.node(ids[e.descriptor]))
        reserved.append((e.target, half))

    if not pending:
        return _aside(g, held, "", reserved, cfg) if held else [ActionDirective("done")]
    e = pending[0]
    x = ids[e.descriptor]
    note = at_note(x, e.target)
    if held is not None and held != x:
        for other in pending:
            if ids[other.descriptor] == held and _place_ok(g, held, other.target, cfg) and \
                    all(_entry_ok(g, p, ids[p.descriptor], held, cfg) for p in entries
                        if p.descriptor in other.supports):
                return [ActionDirective("place_at", held, other.target, (), at_note(held, other.target))]
        return _aside(g, held, "", reserved, cfg)
    if held == x:
        if _place_ok(g, x, e.target, cfg):
            return [ActionDirective("place_at", x, e.target, (), note)]
        return _aside(g, x, "", reserved, cfg)
    step = _clear_path(g, x, note, cfg)
    if step is not None:
        verb, oid = step
        return _uncover(g, oid, note, reserved, cfg) if verb == "uncover" else [_pick(oid, note)]
    _, half = node_box(g.node(x))
    for b in blockers_at(g, e.target, half, exclude=(x,)):
        if g.node(b).visibility == VISIBLE:
            return [_pick(stack_top(g, b), note)]
    return [_pick(x, note)]


# ---------------------------------------------------------------- instructions

def _clause_note(g: Cstg, clause: tuple) -> str:
    kind = clause[0]
    if kind == "hide":
        return f"hide|{_node_for(g, clause[1])}|{_node_for(g, clause[2])}"
    if kind == "aside":
        return f"aside|{_node_for(g, clause[1])}"
    return kind


def _closed(g: Cstg, note: str, cfg) -> bool:
    if any(e.kind == "subtask_completed" and e.detail == note for e in g.log.events):
        return True
    return subgoal_holds(g, note, cfg)


def _originals(g: Cstg) -> dict:
    return {oid: first_recorded_pose(g, oid) for oid in sorted(g.nodes)}


def _instruction_candidates(g: Cstg, text: str, cfg) -> list:
    held = held_id(g, cfg)
    origin = _originals(g)
    reserved = [(origin[oid], node_box(n)[1]) for oid, n in sorted(g.nodes.items())]
    for clause in parse_instruction(text):
        note = _clause_note(g, clause)
        if _closed(g, note, cfg):
            continue
        kind = clause[0]
        if kind == "hide":
            return _hide(g, note, held, reserved, cfg)
        if kind == "aside":
            return _move_aside(g, note, held, reserved, cfg)
        if kind == "flat":
            return _unstack(g, note, held, reserved, cfg)
        return _restore(g, note, held, origin, reserved, cfg)
    return _aside(g, held, "", reserved, cfg) if held else [ActionDirective("done")]


def _hide(g, note, held, reserved, cfg) -> list:
    _, x, y = note.split("|")
    if held is not None:
        if held == y and on_table(g, x, cfg) and is_clear(g, x) and g.node(x).visibility == VISIBLE:
            return [ActionDirective("cover_with", y, x, (f"fits_over({y},{x})",), note)]
        return _aside(g, held, note, reserved, cfg)
    for oid in (x, y):
        step = _clear_path(g, oid, note, cfg)
        if step is not None:
            verb, other = step
            return _uncover(g, other, note, reserved, cfg) if verb == "uncover" else [_pick(other, note)]
        if oid == x and not on_table(g, x, cfg):
            return [_pick(x, note)]
    return [_pick(y, note)]


def _move_aside(g, note, held, reserved, cfg) -> list:
    z = note.split("|")[1]
    if held is not None:
        return _aside(g, held, note, reserved, cfg)
    step = _clear_path(g, z, note, cfg)
    if step is not None:
        verb, other = step
        return _uncover(g, other, note, reserved, cfg) if verb == "uncover" else [_pick(other, note)]
    return [_pick(z, note)]


def _unstack(g, note, held, reserved, cfg) -> list:
    if held is not None:
        return _aside(g, held, note, reserved, cfg)
    for oid, n in sorted(g.nodes.items()):
        if n.visibility == OCCLUDED and n.occluder_id is not None:
            return _uncover(g, n.occluder_id, note, reserved, cfg)
    stacked = [oid for oid in sorted(g.nodes) if supporters(g, oid)]
    if not stacked:
        raise UnsatisfiableGoal("nothing left to unstack")
    top = max(stacked, key=lambda oid: (g.node(oid).centroid.z, oid))
    return [_pick(stack_top(g, top), note)]


def _restore(g, note, held, origin, reserved, cfg) -> list:
    def in_place(oid):
        n = g.node(oid)
        return n.visibility == VISIBLE and oid != held and math.dist(n.centroid, origin[oid]) <= cfg.tol_pos

    order = sorted(g.nodes, key=lambda oid: (round(origin[oid].z, 6), oid))
    if held is not None:
        home = origin[held]
        lower_ready = all(in_place(o) for o in order if origin[o].z < home.z - 1e-6 and o != held)
        if lower_ready and _place_ok(g, held, home, cfg):
            return [ActionDirective("place_at", held, home, (), note)]
        return _aside(g, held, note, reserved, cfg)
    for x in order:
        if in_place(x):
            continue
        n = g.node(x)
        if n.visibility == OCCLUDED:
            if n.occluder_id is None:
                raise UnresolvedTarget(f"{x} is hidden by an unknown object")
            o = n.occluder_id
            return _uncover(g, o, note, reserved, cfg, home=origin[o])
        _, half = node_box(n)
        for b in blockers_at(g, origin[x], half, exclude=(x,)):
            if g.node(b).visibility == VISIBLE and not in_place(b):
                return [_pick(stack_top(g, b), note)]
        if not is_clear(g, x):
            return [_pick(stack_top(g, x), note)]
        return [_pick(x, note)]
    return [ActionDirective("done")]
