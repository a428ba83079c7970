"""Geometric queries over a scene graph used by verification and the oracle."""
from __future__ import annotations

from typing import Optional

from ..config import DEFAULT, PipelineConfig
from ..cstg import OCCLUDED, VISIBLE, Cstg, SceneNode, supported, supporters
from ..geometry import Vec3

SHRINK = 0.003  # boxes touching face-to-face are not in each other's way


def overlap_xy(ax, ay, ahx, ahy, bx, by, bhx, bhy) -> float:
    dx = min(ax + ahx, bx + bhx) - max(ax - ahx, bx - bhx)
    dy = min(ay + ahy, by + bhy) - max(ay - ahy, by - bhy)
    return dx * dy if dx > 0 and dy > 0 else 0.0


def node_box(n: SceneNode):
    """(center, half extents) of the node's observed extent box."""
    lo, hi = n.lo, n.hi
    return (Vec3((lo.x + hi.x) / 2, (lo.y + hi.y) / 2, (lo.z + hi.z) / 2),
            Vec3((hi.x - lo.x) / 2, (hi.y - lo.y) / 2, (hi.z - lo.z) / 2))


def held_id(g: Cstg, cfg: PipelineConfig = DEFAULT) -> Optional[str]:
    """The node hanging in the gripper: visible, resting on nothing, off the table."""
    best = None
    for n in g.visible():
        if n.lo.z > cfg.gap_max and not supporters(g, n.object_id):
            if best is None or n.centroid.z > best.centroid.z:
                best = n
    return None if best is None else best.object_id


def on_table(g: Cstg, oid: str, cfg: PipelineConfig = DEFAULT) -> bool:
    n = g.node(oid)
    return n.lo.z <= cfg.gap_max and not supporters(g, oid)


def is_clear(g: Cstg, oid: str) -> bool:
    return not supported(g, oid)


def stack_top(g: Cstg, oid: str) -> str:
    """The clear node at the top of whatever rests on ``oid`` (``oid`` itself if clear)."""
    cur = oid
    seen = {cur}
    while True:
        above = [a for a in supported(g, cur) if a not in seen]
        if not above:
            return cur
        cur = max(above, key=lambda a: (g.node(a).centroid.z, a))
        seen.add(cur)


def blockers_at(g: Cstg, center: Vec3, half: Vec3, exclude=()) -> list:
    """Nodes whose extent box intersects the box ``center ± half``."""
    out = []
    for oid in sorted(g.nodes):
        if oid in exclude:
            continue
        n = g.nodes[oid]
        if all(min(center[i] + half[i] - SHRINK, n.hi[i]) - max(center[i] - half[i] + SHRINK, n.lo[i]) > 0
               for i in range(3)):
            out.append(oid)
    return out


def support_fraction_at(g: Cstg, x: float, y: float, z_bottom: float, half: Vec3, exclude=(),
                        cfg: PipelineConfig = DEFAULT) -> float:
    """Share of a footprint ``half`` at (x, y) carried by tops near ``z_bottom``."""
    if z_bottom <= cfg.gap_max:
        return 1.0
    area = 4 * half.x * half.y
    total = 0.0
    for n in g.nodes.values():
        if n.object_id in exclude or n.visibility not in (VISIBLE, OCCLUDED):
            continue
        if abs(n.hi.z - z_bottom) <= cfg.gap_max:
            total += overlap_xy(x, y, half.x, half.y, *_fp(n))
    return total / area if area > 0 else 0.0


def _fp(n: SceneNode):
    c, h = node_box(n)
    return c.x, c.y, h.x, h.y


def in_workspace(p, cfg: PipelineConfig = DEFAULT) -> bool:
    return all(cfg.workspace_lo[i] <= p[i] <= cfg.workspace_hi[i] for i in range(3))
