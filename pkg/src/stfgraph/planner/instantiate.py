"""Turn a verified directive into a metric grasp/release action."""
from __future__ import annotations

from typing import Optional

from ..config import DEFAULT, PipelineConfig
from ..cstg import Cstg
from ..directive import ActionDirective, Pose6DoFAction
from ..errors import UnknownObject, UnresolvedTarget
from ..geometry import TOP_DOWN, Pose6DoF, Vec3


def instantiate_action(d: ActionDirective, g: Cstg, cfg: PipelineConfig = DEFAULT) -> Optional[Pose6DoFAction]:
    """Grasp above the subject's top face; release per verb.  ``done`` yields None."""
    if d.verb == "done":
        return None
    if d.subject_id not in g.nodes:
        raise UnknownObject(d.subject_id)
    s = g.node(d.subject_id)
    grasp = Pose6DoF(Vec3(s.centroid.x, s.centroid.y, s.hi.z + cfg.h_app), TOP_DOWN)
    if d.verb == "pick":
        return Pose6DoFAction(grasp, None, "close")
    half_h = (s.hi.z - s.lo.z) / 2
    if d.verb in ("place_on", "cover_with"):
        if d.target not in g.nodes:
            raise UnresolvedTarget(f"{d.target} is not in the graph")
        t = g.node(d.target)
        z = t.hi.z + half_h if d.verb == "place_on" else t.lo.z + half_h
        release = Vec3(t.centroid.x, t.centroid.y, z)
    else:  # place_at, uncover
        release = Vec3.of(d.target)
    return Pose6DoFAction(grasp, Pose6DoF(release, TOP_DOWN), "open")
