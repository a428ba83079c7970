"""Deterministic tabletop block world: axis-aligned boxes, kinematic pick/place,
gravity settling, a footprint-overlap topple rule, and cups that hide whatever
they are lowered over."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

from ..config import DEFAULT, PipelineConfig
from ..errors import UnknownObject
from ..geometry import Pose6DoF, Vec3

TABLE = "table"
GRIPPER = "gripper"
KINDS = ("block", "cup", "flag", "cylinder", "prism", "container")
CUP_WALL = 0.003
EPS = 1e-6

COLORS = {
    "red": (220, 40, 40), "green": (40, 170, 60), "blue": (40, 80, 220), "yellow": (230, 210, 40),
    "purple": (140, 60, 180), "orange": (240, 140, 30), "brown": (130, 85, 45), "gray": (128, 128, 128),
    "white": (235, 235, 235), "black": (30, 30, 30), "pink": (240, 130, 180), "cyan": (40, 200, 210),
    "teal": (20, 128, 128), "tan": (210, 180, 140), "navy": (20, 30, 110), "lime": (150, 230, 40),
    "maroon": (120, 20, 40),
}


def color_of(descriptor: str) -> tuple:
    for word in descriptor.split():
        if word in COLORS:
            return COLORS[word]
    return COLORS["gray"]


@dataclass(frozen=True)
class SimObject:
    object_id: str
    descriptor: str
    half_extents: Vec3
    pose: Pose6DoF
    kind: str = "block"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if min(self.half_extents) <= 0:
            raise ValueError("half extents must be positive")

    @property
    def center(self) -> Vec3:
        return self.pose.position

    @property
    def z_min(self) -> float:
        return self.center.z - self.half_extents.z

    @property
    def z_max(self) -> float:
        return self.center.z + self.half_extents.z

    def top_center(self) -> Vec3:
        return Vec3(self.center.x, self.center.y, self.z_max)

    def moved_to(self, x: float, y: float, z: float) -> "SimObject":
        return replace(self, pose=Pose6DoF(Vec3(x, y, z), self.pose.orientation))


@dataclass(frozen=True)
class WorldState:
    objects: dict  # id -> SimObject; never mutated after construction
    support: dict = field(default_factory=dict)  # id -> supporter id | TABLE | GRIPPER
    held: Optional[str] = None
    contained: dict = field(default_factory=dict)  # hidden id -> cup id
    step: int = 0
    rng_seed: int = 0
    marks: frozenset = frozenset()

    def get(self, object_id: str) -> SimObject:
        try:
            return self.objects[object_id]
        except KeyError:
            raise UnknownObject(object_id) from None

    def by_descriptor(self, descriptor: str) -> SimObject:
        for oid in sorted(self.objects):
            if self.objects[oid].descriptor == descriptor:
                return self.objects[oid]
        raise UnknownObject(descriptor)


def overlap_area(ax, ay, ahx, ahy, bx, by, bhx, bhy) -> float:
    dx = min(ax + ahx, bx + bhx) - max(ax - ahx, bx - bhx)
    dy = min(ay + ahy, by + bhy) - max(ay - ahy, by - bhy)
    return dx * dy if dx > EPS and dy > EPS else 0.0


def _overlap(a: SimObject, x, y, b: SimObject) -> float:
    return overlap_area(x, y, a.half_extents.x, a.half_extents.y,
                        b.center.x, b.center.y, b.half_extents.x, b.half_extents.y)


def _fits_inside(cup: SimObject, x, y, o: SimObject) -> bool:
    ix, iy = cup.half_extents.x - CUP_WALL, cup.half_extents.y - CUP_WALL
    return (abs(o.center.x - x) + o.half_extents.x <= ix + EPS
            and abs(o.center.y - y) + o.half_extents.y <= iy + EPS)


def _landing(objs: dict, subject: SimObject, x: float, y: float, hidden: set, enclose: bool = True):
    """Resting height for ``subject`` dropped at (x, y).

    Returns (base, surfaces-at-base, newly enclosed ids).  Cups skip over
    objects that fit under them; those become enclosed.
    """
    overlapping = [o for oid, o in sorted(objs.items())
                   if oid != subject.object_id and oid not in hidden and _overlap(subject, x, y, o) > 0]
    enclosable = set()
    if enclose and subject.kind == "cup":
        enclosable = {o.object_id for o in overlapping if _fits_inside(subject, x, y, o)}
    inner_h = 2 * subject.half_extents.z - CUP_WALL
    enclosed = set(enclosable)
    while True:
        base = max([0.0] + [o.z_max for o in overlapping if o.object_id not in enclosed])
        keep = {o.object_id for o in overlapping if o.object_id in enclosed
                and o.z_min >= base - EPS and o.z_max <= base + inner_h + EPS}
        if keep == enclosed:
            break
        enclosed = keep
    base = max([0.0] + [o.z_max for o in overlapping if o.object_id not in enclosed])
    surfaces = [o for o in overlapping if o.object_id not in enclosed and abs(o.z_max - base) <= EPS]
    return base, surfaces, enclosed


def _support_fraction(subject: SimObject, x, y, base, surfaces) -> float:
    if base <= EPS:
        return 1.0
    area = 4 * subject.half_extents.x * subject.half_extents.y
    return sum(_overlap(subject, x, y, s) for s in surfaces) / area


def _primary(subject: SimObject, x, y, base, surfaces) -> str:
    if base <= EPS or not surfaces:
        return TABLE
    ranked = sorted(surfaces, key=lambda s: (-round(_overlap(subject, x, y, s), 12), s.object_id))
    return ranked[0].object_id


def settle(w: WorldState) -> WorldState:
    """Drop every free object onto the highest surface under its footprint.

    Idempotent on a settled world.  Held and hidden objects are not moved;
    hidden objects are not surfaces.
    """
    objs = dict(w.objects)
    hidden = set(w.contained)
    free = [o for oid, o in objs.items() if oid != w.held and oid not in hidden]
    free.sort(key=lambda o: (round(o.z_min, 9), o.object_id))
    placed: dict = {}
    support = {}
    for o in free:
        base, surfaces, _ = _landing(placed, o, o.center.x, o.center.y, set(), enclose=False)
        if abs(o.z_min - base) > 1e-12:
            o = o.moved_to(o.center.x, o.center.y, base + o.half_extents.z)
        placed[o.object_id] = o
        objs[o.object_id] = o
        support[o.object_id] = _primary(o, o.center.x, o.center.y, base, surfaces)
    for oid in hidden:
        support[oid] = w.support.get(oid, TABLE)
    if w.held is not None:
        support[w.held] = GRIPPER
    return replace(w, objects=objs, support=support)


def _with_marks(w: WorldState) -> WorldState:
    marks = set(w.marks)
    for oid in w.contained:
        marks.add(f"hidden:{w.objects[oid].descriptor}")
    if w.held is None and not w.contained and all(s == TABLE for s in w.support.values()):
        marks.add("flat")
    return replace(w, marks=frozenset(marks))


def _carried(w: WorldState, root: str) -> list:
    """``root`` plus everything resting on it, transitively (and cup contents)."""
    out, frontier = [root], [root]
    while frontier:
        cur = frontier.pop()
        for oid, sup in sorted(w.support.items()):
            if sup == cur and oid not in out:
                out.append(oid)
                frontier.append(oid)
        for oid, cup in sorted(w.contained.items()):
            if cup == cur and oid not in out:
                out.append(oid)
                frontier.append(oid)
    return out


def _shift(objs: dict, ids, dx: float, dy: float = 0.0) -> None:
    for oid in ids:
        o = objs[oid]
        objs[oid] = o.moved_to(o.center.x + dx, o.center.y + dy, o.center.z)


def _knock_aside(w: WorldState, mover: str, direction: float) -> WorldState:
    """Push table-level neighbours (with their stacks) out of ``mover``'s box."""
    objs = dict(w.objects)
    for _ in range(len(objs) + 1):
        m = objs[mover]
        hit = None
        for oid in sorted(objs):
            o = objs[oid]
            if oid == mover or oid in w.contained or oid == w.held or w.support.get(oid) != TABLE:
                continue
            if _overlap(m, m.center.x, m.center.y, o) > 0 and o.z_min < m.z_max - EPS:
                hit = o
                break
        if hit is None:
            break
        if direction > 0:
            push = (m.center.x + m.half_extents.x) - (hit.center.x - hit.half_extents.x) + 0.005
        else:
            push = (m.center.x - m.half_extents.x) - (hit.center.x + hit.half_extents.x) - 0.005
        _shift(objs, _carried(w, hit.object_id), push)
        mover = hit.object_id
    return replace(w, objects=objs)


def _grasp_ok(o: SimObject, grasp: Pose6DoF, cfg: PipelineConfig) -> bool:
    top = o.top_center()
    dxy = math.hypot(grasp.position.x - top.x, grasp.position.y - top.y)
    dz = grasp.position.z - top.z
    return dxy <= cfg.r_grasp and -cfg.r_grasp <= dz <= cfg.r_grasp + cfg.h_app


def apply_action(w: WorldState, action, subject_id: str, cfg: PipelineConfig = DEFAULT):
    """Execute a pick (no release pose) or a place / lift-and-place.

    Returns (new world, outcome) with outcome in
    {"ok", "grasp_miss", "toppled", "invalid"}; failures leave the world unchanged
    apart from the step counter.
    """
    subject = w.get(subject_id)
    unchanged = replace(w, step=w.step + 1)

    if action.release is None:
        if w.held is not None or subject_id in w.contained:
            return unchanged, "invalid" if w.held is not None else "grasp_miss"
        if not _grasp_ok(subject, action.grasp, cfg):
            return unchanged, "grasp_miss"
        objs = dict(w.objects)
        objs[subject_id] = subject.moved_to(subject.center.x, subject.center.y, cfg.lift_z)
        contained = {k: v for k, v in w.contained.items() if v != subject_id}
        w2 = settle(replace(w, objects=objs, held=subject_id, contained=contained, step=w.step + 1))
        return _with_marks(w2), "ok"

    if w.held is not None and w.held != subject_id:
        return unchanged, "invalid"
    if w.held is None:
        if subject_id in w.contained or not _grasp_ok(subject, action.grasp, cfg):
            return unchanged, "grasp_miss"
    contained = {k: v for k, v in w.contained.items() if v != subject_id}
    x, y = action.release.position.x, action.release.position.y
    others = {k: v for k, v in w.objects.items() if k != subject_id}
    base, surfaces, enclosed = _landing(others, subject, x, y, set(contained))
    outcome = "ok"
    objs = dict(w.objects)
    if _support_fraction(subject, x, y, base, surfaces) < cfg.f_stab:
        outcome = "toppled"
        sup = w.objects[_primary(subject, x, y, base, surfaces)]
        direction = 1.0 if x >= sup.center.x else -1.0
        x = sup.center.x + direction * (sup.half_extents.x + subject.half_extents.x + 0.005)
        objs[subject_id] = subject.moved_to(x, y, subject.half_extents.z)
        support = dict(w.support)
        support[subject_id] = TABLE
        w2 = replace(w, objects=objs, support=support, held=None, contained=contained, step=w.step + 1)
        w2 = _knock_aside(w2, subject_id, direction)
    else:
        objs[subject_id] = subject.moved_to(x, y, base + subject.half_extents.z)
        for oid in enclosed:
            contained[oid] = subject_id
        w2 = replace(w, objects=objs, held=None, contained=contained, step=w.step + 1)
    return _with_marks(settle(w2)), outcome


def nudge(w: WorldState, object_id: str, dx: float, dy: float = 0.0) -> WorldState:
    """External disturbance: slide an object (and its stack) without an agent action."""
    w.get(object_id)
    objs = dict(w.objects)
    _shift(objs, _carried(w, object_id), dx, dy)
    return _with_marks(settle(replace(w, objects=objs)))


def interpenetration(w: WorldState) -> float:
    """Largest box overlap depth between any two non-nested objects."""
    worst = 0.0
    ids = sorted(w.objects)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if w.contained.get(a) == b or w.contained.get(b) == a:
                continue
            oa, ob = w.objects[a], w.objects[b]
            d = min(
                min(oa.center[k] + oa.half_extents[k], ob.center[k] + ob.half_extents[k])
                - max(oa.center[k] - oa.half_extents[k], ob.center[k] - ob.half_extents[k])
                for k in range(3)
            )
            worst = max(worst, d)
    return worst


def support_is_acyclic(w: WorldState) -> bool:
    for start in w.support:
        seen, cur = set(), start
        while cur in w.support:
            if cur in seen:
                return False
            seen.add(cur)
            cur = w.support[cur]
    return True
