"""Prompt assembly for the remote planner: graph text, recent events, the goal
and an observation image with one id label per visible node."""
from __future__ import annotations

import base64
import hashlib
import io
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from ..config import DEFAULT, PipelineConfig
from ..cstg import VISIBLE, Cstg, recent_events, spatial_context
from ..directive import VERBS
from ..goal import GoalSpec

SCHEMA_VERSION = "directive/1"

SYSTEM_PREAMBLE = f"""You plan one manipulation step at a time for a tabletop robot.
You receive a scene graph listing every tracked object (id, descriptor, centroid,
shape vector, visibility), pairwise relations, recent events, the goal, and an image
with object ids drawn at their mask centers. Objects marked occluded are still
present at their last known pose.

Before answering, check the preconditions of the step against the graph: the subject
exists and is visible (occluded objects must be uncovered first), a picked object has
nothing resting on it, and a placement target has room on top.

Reply with exactly one JSON object and nothing else, schema "{SCHEMA_VERSION}":
{{"version": "{SCHEMA_VERSION}",
 "verb": one of {", ".join(VERBS)},
 "subject": object id (null only for done),
 "target": object id for place_on and cover_with, [x, y, z] in meters for place_at
           and uncover, null for pick and done,
 "preconditions": list of predicates such as "clear_top(obj2)", "exists(obj4)",
 "subgoal": short note on what this step achieves}}
"""

LABEL_FILL = (255, 255, 255)
LABEL_INK = (0, 0, 0)


@dataclass(frozen=True, eq=False)
class PromptContext:
    spatial_context_text: str
    recent_events_text: str
    goal: GoalSpec
    annotated_observation: bytes  # PNG
    labels: tuple = ()  # (node id, (u, v)) in drawing order
    feedback: tuple = ()  # verification failures of earlier proposals this step
    preamble: str = SYSTEM_PREAMBLE

    def text(self) -> str:
        parts = [self.spatial_context_text, self.recent_events_text, self.goal.render()]
        if self.feedback:
            parts.append("rejected proposals this step:\n" + "\n".join(f"- {f}" for f in self.feedback))
        parts.append("Reply with the next directive as a single JSON object.")
        return "\n\n".join(parts)

    def image_data_url(self) -> str:
        return "data:image/png;base64," + base64.b64encode(self.annotated_observation).decode("ascii")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.preamble.encode())
        h.update(self.text().encode())
        h.update(self.annotated_observation)
        return h.hexdigest()[:16]


def label_positions(g: Cstg, obs) -> list:
    """(node id, (u, v)) for every visible node, at the pixel centroid of the
    mask of that descriptor lying nearest to the node's projected centroid."""
    masks = {}
    for sid, m in sorted(obs.masks.items()):
        if m.popcount() == 0:
            continue
        r, c = m.pixel_centroid()
        masks.setdefault(obs.descriptors[sid], []).append((c, r))
    out = []
    for oid in sorted(g.nodes):
        n = g.nodes[oid]
        cands = masks.get(n.descriptor)
        if n.visibility != VISIBLE or not cands:
            continue
        u, v = obs.cam.project(np.array([tuple(n.centroid)]))[0]
        best = min(cands, key=lambda p: math.hypot(p[0] - u, p[1] - v))
        out.append((oid, (float(best[0]), float(best[1]))))
    return out


def annotate(rgb: np.ndarray, labels) -> bytes:
    img = Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), "RGB")
    draw = ImageDraw.Draw(img)
    for oid, (u, v) in labels:
        x0, y0, x1, y1 = draw.textbbox((0, 0), oid)
        w, h = x1 - x0, y1 - y0
        left, top = int(round(u - w / 2)), int(round(v - h / 2))
        draw.rectangle((left - 1, top - 1, left + w + 1, top + h + 1), fill=LABEL_FILL)
        draw.text((left - x0, top - y0), oid, fill=LABEL_INK)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def assemble_prompt(g: Cstg, obs, goal: GoalSpec, cfg: PipelineConfig = DEFAULT, feedback=()) -> PromptContext:
    labels = tuple(label_positions(g, obs))
    return PromptContext(
        spatial_context_text=spatial_context(g, cfg, events=False),
        recent_events_text=recent_events(g, cfg),
        goal=goal,
        annotated_observation=annotate(obs.rgb, labels),
        labels=labels,
        feedback=tuple(feedback),
    )
