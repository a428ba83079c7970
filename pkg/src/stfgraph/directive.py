"""Semantic action directives and their metric instantiations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .geometry import Pose6DoF, Vec3

VERBS = ("pick", "place_on", "place_at", "cover_with", "uncover", "done")
# verb -> kind of target: "object", "point" or None
TARGET_KIND = {"pick": None, "place_on": "object", "place_at": "point",
               "cover_with": "object", "uncover": "point", "done": None}
PLACING = ("place_on", "place_at", "cover_with", "uncover")


@dataclass(frozen=True)
class ActionDirective:
    verb: str
    subject_id: Optional[str] = None
    target: Union[str, Vec3, None] = None
    preconditions: tuple = ()  # e.g. ("clear_top(obj2)", "exists(obj4)")
    subgoal_note: str = ""

    def __post_init__(self):
        if self.verb not in VERBS:
            raise ValueError(f"unknown verb {self.verb!r}")
        kind = TARGET_KIND[self.verb]
        if self.verb != "done" and not self.subject_id:
            raise ValueError(f"{self.verb} needs a subject")
        if kind is None and self.target is not None:
            raise ValueError(f"{self.verb} takes no target")
        if kind == "object" and not isinstance(self.target, str):
            raise ValueError(f"{self.verb} targets an object id")
        if kind == "point":
            if isinstance(self.target, str) or self.target is None or len(self.target) != 3:
                raise ValueError(f"{self.verb} targets a point")
            object.__setattr__(self, "target", Vec3.of(self.target))
        object.__setattr__(self, "preconditions", tuple(self.preconditions))

    def to_dict(self) -> dict:
        target = list(self.target) if isinstance(self.target, Vec3) else self.target
        return {"verb": self.verb, "subject": self.subject_id, "target": target,
                "preconditions": list(self.preconditions), "subgoal": self.subgoal_note}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionDirective":
        return cls(d["verb"], d.get("subject"), d.get("target"), tuple(d.get("preconditions", ())),
                   d.get("subgoal", "") or "")

    def describe(self) -> str:
        if self.verb == "done":
            return "done"
        if isinstance(self.target, Vec3):
            tgt = " (" + ", ".join(f"{v:.4f}" for v in self.target) + ")"
        else:
            tgt = f" {self.target}" if self.target else ""
        return f"{self.verb} {self.subject_id}{tgt}"


@dataclass(frozen=True)
class Pose6DoFAction:
    grasp: Pose6DoF
    release: Optional[Pose6DoF] = None
    gripper: str = "close"  # close | open | none

    def __post_init__(self):
        if self.gripper not in ("close", "open", "none"):
            raise ValueError(f"bad gripper command {self.gripper!r}")

    def to_dict(self) -> dict:
        pose = lambda p: None if p is None else {"position": list(p.position), "orientation": list(p.orientation)}  # noqa: E731
        return {"grasp": pose(self.grasp), "release": pose(self.release), "gripper": self.gripper}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose6DoFAction":
        pose = lambda p: None if p is None else Pose6DoF(Vec3.of(p["position"]), tuple(p["orientation"]))  # noqa: E731
        return cls(pose(d["grasp"]), pose(d["release"]), d["gripper"])
