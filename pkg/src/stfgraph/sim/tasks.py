"""Declarative task files (``task/1`` JSON), seeded scene variants, and success checks.

A task file looks like::

    {"format": "task/1", "name": "stack-3", "category": "build", "horizon": 20,
     "objects": [{"id": "b1", "descriptor": "red block", "kind": "block",
                  "half_extents": [0.02, 0.02, 0.02], "at": [-0.3, 0.0]},
                 {"id": "b2", ..., "on": "b1"}],
     "goal": {"kind": "goal_image", "goal_scene": [{"descriptor": "red block",
              "target": [0.1, 0.0, 0.02], "support": ["table"]}, ...]},
     "shuffle": [["b1", "b2", "b3"]], "jitter": 0.01,
     "checkpoint": "hidden:red block"}

Objects are listed bottom-up; ``on`` stacks an object on an earlier one (with an
optional ``offset``).  ``shuffle`` groups have their descriptors permuted per
seed; instruction text and checkpoint are rewritten to follow the permutation.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from ..config import DEFAULT, PipelineConfig
from ..geometry import Pose6DoF, Vec3
from ..goal import GoalSpec
from .world import TABLE, SimObject, WorldState, _landing, settle

FORMAT = "task/1"
CATEGORIES = ("build", "disassemble", "hide_restore", "cover")


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    category: str
    objects: tuple  # raw object dicts
    goal: GoalSpec
    horizon: int = 30
    checkpoint: Optional[str] = None
    shuffle: tuple = ()
    jitter: float = 0.0
    seed: Optional[int] = None
    description: str = ""

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        if d.get("format") != FORMAT:
            raise ValueError(f"expected format {FORMAT}, got {d.get('format')!r}")
        return cls(
            name=d["name"], category=d["category"], objects=tuple(d["objects"]),
            goal=GoalSpec.from_dict(d["goal"]), horizon=int(d.get("horizon", 30)),
            checkpoint=d.get("checkpoint"), shuffle=tuple(tuple(g) for g in d.get("shuffle", ())),
            jitter=float(d.get("jitter", 0.0)), seed=d.get("seed"), description=d.get("description", ""),
        )

    def to_dict(self) -> dict:
        d = {"format": FORMAT, "name": self.name, "category": self.category, "horizon": self.horizon,
             "objects": list(self.objects), "goal": self.goal.to_dict(), "shuffle": [list(g) for g in self.shuffle],
             "jitter": self.jitter, "description": self.description}
        if self.checkpoint is not None:
            d["checkpoint"] = self.checkpoint
        if self.seed is not None:
            d["seed"] = self.seed
        return d

    @classmethod
    def load(cls, path) -> "TaskSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def variant(self, seed: int) -> "TaskSpec":
        """Concrete scene for ``seed``: permuted descriptors and jittered bases."""
        rng = np.random.default_rng(seed)
        objs = [dict(o) for o in self.objects]
        by_id = {o["id"]: o for o in objs}
        mapping = {}
        for group in self.shuffle:
            descs = [by_id[i]["descriptor"] for i in group]
            perm = rng.permutation(len(descs))
            for i, p in zip(group, perm):
                mapping[by_id[i]["descriptor"]] = descs[p]
                by_id[i]["descriptor"] = descs[p]
        for o in objs:
            if "at" in o and self.jitter > 0:
                dx, dy = rng.uniform(-self.jitter, self.jitter, size=2)
                o["at"] = [o["at"][0] + float(dx), o["at"][1] + float(dy)]
        goal, checkpoint = self.goal, self.checkpoint
        if mapping:
            goal = GoalSpec("instruction", instruction=_remap(goal.instruction, mapping)) \
                if goal.kind == "instruction" else goal
            checkpoint = _remap(checkpoint, mapping) if checkpoint else checkpoint
        return replace(self, objects=tuple(objs), goal=goal, checkpoint=checkpoint, seed=seed)

    @cached_property
    def _initial(self) -> WorldState:
        placed: dict = {}
        for o in self.objects:
            half = Vec3.of(o["half_extents"])
            if "on" in o:
                base = placed[o["on"]].center
                dx, dy = o.get("offset", [0.0, 0.0])
                x, y = base.x + dx, base.y + dy
            else:
                x, y = o["at"]
            obj = SimObject(o["id"], o["descriptor"], half, Pose6DoF(Vec3(0.0, 0.0, 0.0)), o.get("kind", "block"))
            z, _, _ = _landing(placed, obj, x, y, set(), enclose=False)
            placed[o["id"]] = obj.moved_to(float(x), float(y), z + half.z)
        return settle(WorldState(placed, rng_seed=int(self.seed or 0)))

    def initial_state(self) -> WorldState:
        return self._initial


def _remap(text: str, mapping: dict) -> str:
    keys = sorted(mapping, key=len, reverse=True)
    pattern = re.compile("|".join(re.escape(k) for k in keys))
    return pattern.sub(lambda m: mapping[m.group(0)], text)


def check_success(w: WorldState, task: TaskSpec, cfg: PipelineConfig = DEFAULT) -> bool:
    """Goal-scene tasks: every entry sits within tolerance on a listed supporter.
    Instruction tasks: every object back within tolerance of its initial pose,
    nothing held or hidden, and the task's checkpoint was reached on the way."""
    if w.held is not None:
        return False
    if task.goal.kind == "goal_image":
        for entry in task.goal.goal_scene:
            try:
                obj = w.by_descriptor(entry.descriptor)
            except Exception:
                return False
            if obj.object_id in w.contained:
                return False
            if math.dist(obj.center, entry.target) > cfg.tol_pos:
                return False
            allowed = {TABLE if s == TABLE else _id_of(w, s) for s in entry.supports}
            if w.support.get(obj.object_id) not in allowed:
                return False
        return True
    init = task.initial_state()
    if w.contained:
        return False
    for oid, o in init.objects.items():
        if math.dist(w.objects[oid].center, o.center) > cfg.tol_pos:
            return False
    return task.checkpoint is None or task.checkpoint in w.marks


def _id_of(w: WorldState, descriptor: str):
    try:
        return w.by_descriptor(descriptor).object_id
    except Exception:
        return None


def bundled_dir() -> Path:
    return Path(str(resources.files("stfgraph.sim") / "tasks"))


SUITE_8 = ("bridge", "cover-top", "cover-bottom", "containers", "containers-hard",
           "stack-3", "stack-5", "unstack-then-stack")
REAL_WORLD = ("block-building", "block-disassembly", "hide-and-restore")


def load_bundled(name: str) -> TaskSpec:
    return TaskSpec.load(bundled_dir() / f"{name}.json")


def bundled_names() -> list:
    return sorted(p.stem for p in bundled_dir().glob("*.json"))


def resolve_task(name_or_path) -> TaskSpec:
    """A bundled task by name, or a ``task/1`` JSON file by path."""
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        return TaskSpec.load(p)
    if str(name_or_path) not in bundled_names():
        raise ValueError(f"unknown task {name_or_path!r}; bundled: {', '.join(bundled_names())}")
    return load_bundled(str(name_or_path))
