"""Subgoal notes carried by directives and the predicates that close them.

Notes are small self-describing strings:

* ``hide|X|Y``  X is occluded and Y is recorded as its occluder
* ``aside|Z``   Z rests on the table clear of where it started
* ``flat``      every object is visible, on the table and out of the gripper
* ``restore``   every object is visible and back where it started
* ``at|X|x,y,z``  X is visible, out of the gripper and within tolerance of the point
"""
from __future__ import annotations

import math

from ..config import DEFAULT, PipelineConfig
from ..cstg import OCCLUDED, VISIBLE, Cstg, first_recorded_pose, supporters
from .scene import held_id, on_table

ASIDE_MIN = 0.05


def subgoal_holds(g: Cstg, note: str, cfg: PipelineConfig = DEFAULT) -> bool:
    kind, *args = note.split("|")
    if kind == "hide":
        x, y = args
        return x in g.nodes and g.nodes[x].visibility == OCCLUDED and g.nodes[x].occluder_id == y
    if kind == "aside":
        (z,) = args
        if z not in g.nodes or g.nodes[z].visibility != VISIBLE or not on_table(g, z, cfg):
            return False
        c, o = g.nodes[z].centroid, first_recorded_pose(g, z)
        return math.hypot(c.x - o.x, c.y - o.y) > ASIDE_MIN
    if kind == "flat":
        return (held_id(g, cfg) is None
                and all(n.visibility == VISIBLE and not supporters(g, oid) for oid, n in g.nodes.items()))
    if kind == "restore":
        if held_id(g, cfg) is not None:
            return False
        return all(n.visibility == VISIBLE and math.dist(n.centroid, first_recorded_pose(g, oid)) <= cfg.tol_pos
                   for oid, n in g.nodes.items())
    if kind == "at":
        x, point = args
        p = tuple(float(v) for v in point.split(","))
        return (x in g.nodes and g.nodes[x].visibility == VISIBLE and held_id(g, cfg) != x
                and math.dist(g.nodes[x].centroid, p) <= cfg.tol_pos)
    raise ValueError(f"unknown subgoal {note!r}")


def at_note(object_id: str, point) -> str:
    return f"at|{object_id}|" + ",".join(f"{v:.4f}" for v in point)


def checker(cfg: PipelineConfig = DEFAULT):
    return lambda g, note: subgoal_holds(g, note, cfg)
