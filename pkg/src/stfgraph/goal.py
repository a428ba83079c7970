"""Goal specifications shared by the simulator and the planner."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .geometry import Vec3


@dataclass(frozen=True)
class GoalEntry:
    descriptor: str
    target: Vec3
    supports: tuple = ("table",)  # supporter descriptors, or "table"

    def to_dict(self) -> dict:
        return {"descriptor": self.descriptor, "target": list(self.target), "support": list(self.supports)}

    @classmethod
    def from_dict(cls, d: dict) -> "GoalEntry":
        sup = d.get("support", ["table"])
        if isinstance(sup, str):
            sup = [sup]
        return cls(d["descriptor"], Vec3.of(d["target"]), tuple(sup))


@dataclass(frozen=True)
class GoalSpec:
    kind: str  # "goal_image" | "instruction"
    instruction: Optional[str] = None
    goal_scene: Optional[tuple] = None

    def __post_init__(self):
        if self.kind == "instruction":
            if not self.instruction or self.goal_scene is not None:
                raise ValueError("instruction goals carry exactly an instruction")
        elif self.kind == "goal_image":
            if self.goal_scene is None or self.instruction is not None:
                raise ValueError("goal_image goals carry exactly a goal_scene")
        else:
            raise ValueError(f"unknown goal kind {self.kind!r}")

    def render(self) -> str:
        if self.kind == "instruction":
            return f"instruction: {self.instruction}"
        lines = ["goal scene:"]
        for e in self.goal_scene:
            t = " ".join(f"{v:.4f}" for v in e.target)
            lines.append(f"- {e.descriptor} at {t} on {', '.join(e.supports)}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        if self.kind == "instruction":
            return {"kind": self.kind, "instruction": self.instruction}
        return {"kind": self.kind, "goal_scene": [e.to_dict() for e in self.goal_scene]}

    @classmethod
    def from_dict(cls, d: dict) -> "GoalSpec":
        if d["kind"] == "instruction":
            return cls("instruction", instruction=d["instruction"])
        return cls("goal_image", goal_scene=tuple(GoalEntry.from_dict(e) for e in d["goal_scene"]))
