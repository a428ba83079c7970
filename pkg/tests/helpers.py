"""Small builders shared by the test modules."""
from __future__ import annotations

from stfgraph.geometry import ShapeVector, Vec3
from stfgraph.stf import StfToken, VisualEvidence

EVIDENCE = VisualEvidence(((0, 0, (0.5, 0.5, 0.5, 0.03, 0.03)),), (0.5, 0.5, 0.5, 0.03, 0.03))


def box_token(tid: str, descriptor: str, center, half=(0.02, 0.02, 0.02), t: int = 0) -> StfToken:
    c = Vec3.of(center)
    h = Vec3.of(half)
    shape = ShapeVector(c, Vec3(h.x / 2, h.y / 2, h.z / 2), c - h, c + h)
    return StfToken(tid, descriptor, EVIDENCE, c, shape, t)


def block_on_table(tid, descriptor, x, y, t=0, half=0.02, level=0):
    """Cube resting on the table (level 0) or stacked ``level`` cubes high."""
    return box_token(tid, descriptor, (x, y, half + 2 * half * level), (half, half, half), t)
