"""Causal spatio-temporal scene graph.

A :class:`Cstg` value is immutable.  :func:`update_graph` folds one step of
tokens (and the action executed since the previous step) into a new value:
identities are associated, per-node token windows advance, pairwise edges are
recomputed and semantic events are appended to the memory log.

Snapshot format (``cstg/1``)::

    {"format": "cstg/1", "step": t, "window_k": K, "memory": true, "next_id": n,
     "notes": [association remarks of the latest step],
     "nodes": [{"id", "descriptor", "visibility", "occluder", "window": [token],
                "last_known": token}],
     "edges": [{"from", "to", "distance", "offset": [x, y, z], "tags": [...]}],
     "events": [{"id", "t", "kind", "subject", "location", "cause", "action", "detail"}]}

Tokens use :meth:`StfToken.to_dict`.  Nodes, edges and tags are sorted.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .config import DEFAULT, PipelineConfig
from .directive import ActionDirective
from .errors import StaleStep, UnknownObject
from .geometry import Vec3, euclidean, offset
from .stf import StfToken, fmt, serialize_token

FORMAT = "cstg/1"
VISIBLE, OCCLUDED, REMOVED = "visible", "occluded", "removed"
EVENT_KINDS = ("planned_displacement", "unintended_collision", "occlusion_start", "occlusion_end",
               "action_executed", "subtask_completed", "precondition_violation")
CAUSES = ("agent_action", "external", "unknown")
TAGS = ("above", "below", "left_of", "right_of", "in_front", "behind", "supporting", "supported_by", "near")
MIRROR = {"above": "below", "below": "above", "left_of": "right_of", "right_of": "left_of",
          "in_front": "behind", "behind": "in_front", "supporting": "supported_by",
          "supported_by": "supporting", "near": "near"}
# events whose location is where the subject was before anything happened to it
_POSE_EVENTS = ("planned_displacement", "unintended_collision", "occlusion_start", "action_executed")
TIE_EPS = 1e-12


@dataclass(frozen=True)
class SceneNode:
    object_id: str
    descriptor: str
    window: tuple  # StfTokens, oldest first
    last_known: StfToken
    visibility: str = VISIBLE
    occluder_id: Optional[str] = None

    @property
    def centroid(self) -> Vec3:
        return self.last_known.centroid

    @property
    def lo(self) -> Vec3:
        return self.last_known.shape.lo

    @property
    def hi(self) -> Vec3:
        return self.last_known.shape.hi

    def half_extents(self) -> Vec3:
        return self.last_known.shape.half_extents()

    def to_dict(self) -> dict:
        return {"id": self.object_id, "descriptor": self.descriptor, "visibility": self.visibility,
                "occluder": self.occluder_id, "window": [t.to_dict() for t in self.window],
                "last_known": self.last_known.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneNode":
        return cls(d["id"], d["descriptor"], tuple(StfToken.from_dict(t) for t in d["window"]),
                   StfToken.from_dict(d["last_known"]), d["visibility"], d["occluder"])


@dataclass(frozen=True)
class SceneEdge:
    from_id: str
    to_id: str
    distance: float
    offset: Vec3  # centroid of to_id minus centroid of from_id
    tags: frozenset  # relations of from_id with respect to to_id

    def reversed(self) -> "SceneEdge":
        return SceneEdge(self.to_id, self.from_id, self.distance, -self.offset,
                         frozenset(MIRROR[t] for t in self.tags))

    def to_dict(self) -> dict:
        return {"from": self.from_id, "to": self.to_id, "distance": self.distance,
                "offset": list(self.offset), "tags": sorted(self.tags)}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneEdge":
        return cls(d["from"], d["to"], d["distance"], Vec3.of(d["offset"]), frozenset(d["tags"]))


@dataclass(frozen=True)
class CausalEvent:
    event_id: int
    timestamp: int
    kind: str
    subject_id: str
    location: Vec3
    cause: str = "unknown"
    action_ref: Optional[str] = None  # set when cause is agent_action
    detail: str = ""

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.cause not in CAUSES:
            raise ValueError(f"unknown cause {self.cause!r}")

    def to_dict(self) -> dict:
        return {"id": self.event_id, "t": self.timestamp, "kind": self.kind, "subject": self.subject_id,
                "location": list(self.location), "cause": self.cause, "action": self.action_ref,
                "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> "CausalEvent":
        return cls(d["id"], d["t"], d["kind"], d["subject"], Vec3.of(d["location"]), d["cause"],
                   d["action"], d["detail"])

    def render(self, precision: int = 4) -> str:
        loc = " ".join(fmt(v, precision) for v in self.location)
        cause = f"{self.cause}:{self.action_ref}" if self.action_ref else self.cause
        text = f"[t={self.timestamp}] {self.kind} {self.subject_id} at {loc} cause={cause}"
        return f"{text} ({self.detail})" if self.detail else text


@dataclass(frozen=True)
class MemoryLog:
    events: tuple = ()
    horizon: int = 3  # the token window length the log was recorded under

    def append(self, events: Iterable[CausalEvent]) -> "MemoryLog":
        return replace(self, events=self.events + tuple(events))

    def recent(self, n: int) -> tuple:
        return self.events[-n:] if n > 0 else ()

    def __len__(self):
        return len(self.events)


@dataclass(frozen=True, eq=False)
class Cstg:
    nodes: dict  # object_id -> SceneNode; treat as read-only
    edges: tuple = ()
    log: MemoryLog = MemoryLog()
    current_step: int = -1
    window_k: int = 3
    memory: bool = True
    next_id: int = 1
    notes: tuple = ()  # association remarks from the latest step

    def node(self, object_id: str) -> SceneNode:
        try:
            return self.nodes[object_id]
        except KeyError:
            raise UnknownObject(object_id) from None

    def visible(self) -> list:
        return [n for _, n in sorted(self.nodes.items()) if n.visibility == VISIBLE]

    def by_descriptor(self, descriptor: str) -> list:
        return [n for _, n in sorted(self.nodes.items()) if n.descriptor == descriptor]

    def tags(self, a: str, b: str) -> frozenset:
        return relation_query(self, a, b).tags

    def to_snapshot(self) -> dict:
        return {"format": FORMAT, "step": self.current_step, "window_k": self.window_k,
                "memory": self.memory, "next_id": self.next_id, "notes": list(self.notes),
                "nodes": [self.nodes[k].to_dict() for k in sorted(self.nodes)],
                "edges": [e.to_dict() for e in self.edges],
                "events": [e.to_dict() for e in self.log.events]}

    def snapshot_json(self) -> str:
        return json.dumps(self.to_snapshot(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_snapshot(cls, d: dict) -> "Cstg":
        if d.get("format") != FORMAT:
            raise ValueError(f"expected {FORMAT} snapshot")
        nodes = {n["id"]: SceneNode.from_dict(n) for n in d["nodes"]}
        log = MemoryLog(tuple(CausalEvent.from_dict(e) for e in d["events"]), d["window_k"])
        return cls(nodes, tuple(SceneEdge.from_dict(e) for e in d["edges"]), log, d["step"],
                   d["window_k"], d["memory"], d["next_id"], tuple(d.get("notes", ())))


def empty_graph(cfg: PipelineConfig = DEFAULT) -> Cstg:
    return Cstg({}, (), MemoryLog((), cfg.window_k), -1, cfg.window_k, not cfg.disable_cstg_memory)


# ---------------------------------------------------------------- association

@dataclass(frozen=True)
class Association:
    assignment: dict  # token object_id -> node id
    new: tuple  # token ids that start new nodes
    duplicates: tuple = ()  # token ids dropped as re-detections of an already matched node
    notes: tuple = ()  # AmbiguousAssociation details


def associate_identities(prev: Cstg, incoming: Iterable[StfToken], cfg: PipelineConfig = DEFAULT) -> Association:
    """Match tokens to existing nodes.

    Descriptors must agree; within a descriptor the matching minimises total
    centroid distance (Hungarian).  Exact ties go to the lower token id.
    Tokens left over become new nodes unless they sit within ``d_assoc`` of a
    same-descriptor node, in which case they are treated as duplicates.
    """
    tokens = sorted(incoming, key=lambda tk: tk.object_id)
    t_expected = prev.current_step + 1
    for tk in tokens:
        if tk.timestamp != t_expected:
            raise StaleStep(f"token {tk.object_id} has t={tk.timestamp}, expected {t_expected}")
    if len({tk.object_id for tk in tokens}) != len(tokens):
        raise ValueError("duplicate token ids in one step")

    groups: dict = {}
    for tk in tokens:
        groups.setdefault(tk.descriptor, []).append(tk)
    assignment, new, dups, notes = {}, [], [], []
    for desc in sorted(groups):
        toks = groups[desc]
        nodes = [n for n in prev.by_descriptor(desc) if n.visibility != REMOVED]
        if not nodes:
            new.extend(tk.object_id for tk in toks)
            continue
        cost = np.array([[euclidean(tk.centroid, n.centroid) for n in nodes] for tk in toks])
        rows, cols = linear_sum_assignment(cost)
        match = {int(r): int(c) for r, c in zip(rows, cols)}
        notes.extend(_break_ties(match, cost, toks, nodes))
        for r, tk in enumerate(toks):
            if r in match:
                assignment[tk.object_id] = nodes[match[r]].object_id
            elif cost[r].min() <= cfg.d_assoc:
                dups.append(tk.object_id)
            else:
                new.append(tk.object_id)
    return Association(assignment, tuple(new), tuple(dups), tuple(notes))


def _break_ties(match: dict, cost: np.ndarray, toks: list, nodes: list) -> list:
    """Swap equal-cost alternatives so that, for every node, the lowest token id
    wins a tie; return one note per node that was contested."""

    def swap_neutral(r, r2, c):
        if abs(cost[r2, c] - cost[r, c]) > TIE_EPS:
            return False
        c2 = match.get(r2)
        before = cost[r, c] + (cost[r2, c2] if c2 is not None else 0.0)
        after = cost[r2, c] + (cost[r, c2] if c2 is not None else 0.0)
        return abs(after - before) <= TIE_EPS

    changed, budget = True, cost.size + 1  # bounded: pathological multi-way ties cannot cycle forever
    while changed and budget:
        changed, budget = False, budget - 1
        owner = {c: r for r, c in match.items()}
        for c, r in sorted(owner.items()):
            for r2 in range(r):  # rows are in token-id order
                if swap_neutral(r, r2, c):
                    c2 = match.get(r2)
                    match[r2] = c
                    if c2 is None:
                        del match[r]
                    else:
                        match[r] = c2
                    changed = True
                    break
            if changed:
                break
    notes = []
    for r, c in sorted(match.items(), key=lambda rc: rc[1]):
        rivals = [toks[r2].object_id for r2 in range(len(toks)) if r2 != r and swap_neutral(r, r2, c)]
        if rivals:
            notes.append(f"AmbiguousAssociation: {toks[r].object_id} ties with {', '.join(rivals)} "
                         f"for {nodes[c].object_id}; lowest id kept")
    return notes


# ---------------------------------------------------------------- relations

def _box_center(tk: StfToken) -> Vec3:
    return Vec3((tk.shape.lo.x + tk.shape.hi.x) / 2, (tk.shape.lo.y + tk.shape.hi.y) / 2,
                (tk.shape.lo.z + tk.shape.hi.z) / 2)


def _xy_overlap(a: SceneNode, b: SceneNode) -> float:
    dx = min(a.hi.x, b.hi.x) - max(a.lo.x, b.lo.x)
    dy = min(a.hi.y, b.hi.y) - max(a.lo.y, b.lo.y)
    return dx * dy if dx > 0 and dy > 0 else 0.0


def _within_xy(c: Vec3, n: SceneNode) -> bool:
    return n.lo.x <= c.x <= n.hi.x and n.lo.y <= c.y <= n.hi.y


def rests_on(a: SceneNode, b: SceneNode, cfg: PipelineConfig = DEFAULT) -> bool:
    """``a`` sits on ``b``: small vertical gap, overlapping footprints, and one
    centroid over the other's footprint (the second case covers spans)."""
    gap = a.lo.z - b.hi.z
    if not (-cfg.eps_box <= gap <= cfg.gap_max):
        return False
    if a.centroid.z <= b.centroid.z or _xy_overlap(a, b) <= 0:
        return False
    return _within_xy(a.centroid, b) or _within_xy(b.centroid, a)


def relation_tags(a: SceneNode, b: SceneNode, cfg: PipelineConfig = DEFAULT) -> frozenset:
    """Discrete relations of ``a`` with respect to ``b``."""
    tags = set()
    ca, cb = a.centroid, b.centroid
    if ca.z > cb.z and a.lo.z >= b.hi.z - cfg.gap_max / 2:
        tags.add("above")
    elif cb.z > ca.z and b.lo.z >= a.hi.z - cfg.gap_max / 2:
        tags.add("below")
    if ca.x < cb.x and a.hi.x <= b.lo.x + cfg.gap_max / 2:
        tags.add("left_of")
    elif cb.x < ca.x and b.hi.x <= a.lo.x + cfg.gap_max / 2:
        tags.add("right_of")
    if ca.y < cb.y and a.hi.y <= b.lo.y + cfg.gap_max / 2:
        tags.add("in_front")
    elif cb.y < ca.y and b.hi.y <= a.lo.y + cfg.gap_max / 2:
        tags.add("behind")
    if rests_on(a, b, cfg):
        tags.add("supported_by")
    elif rests_on(b, a, cfg):
        tags.add("supporting")
    if euclidean(ca, cb) < cfg.near_dist:
        tags.add("near")
    return frozenset(tags)


def compute_edges(nodes: dict, cfg: PipelineConfig = DEFAULT) -> tuple:
    live = [nodes[k] for k in sorted(nodes) if nodes[k].visibility != REMOVED]
    edges = []
    for i, a in enumerate(live):
        for b in live[i + 1:]:
            edges.append(SceneEdge(a.object_id, b.object_id, euclidean(a.centroid, b.centroid),
                                   offset(a.centroid, b.centroid), relation_tags(a, b, cfg)))
    return tuple(edges)


def relation_query(g: Cstg, from_id: str, to_id: str) -> SceneEdge:
    g.node(from_id)
    g.node(to_id)
    lo, hi = sorted((from_id, to_id))
    for e in g.edges:
        if e.from_id == lo and e.to_id == hi:
            return e if e.from_id == from_id else e.reversed()
    raise UnknownObject(f"no edge between {from_id} and {to_id}")


def supporters(g: Cstg, object_id: str) -> list:
    """Ids of the nodes ``object_id`` rests on."""
    out = []
    for e in g.edges:
        if e.from_id == object_id and "supported_by" in e.tags:
            out.append(e.to_id)
        elif e.to_id == object_id and "supporting" in e.tags:
            out.append(e.from_id)
    return sorted(out)


def supported(g: Cstg, object_id: str) -> list:
    """Ids of the nodes resting on ``object_id``."""
    out = []
    for e in g.edges:
        if e.from_id == object_id and "supporting" in e.tags:
            out.append(e.to_id)
        elif e.to_id == object_id and "supported_by" in e.tags:
            out.append(e.from_id)
    return sorted(out)


# ---------------------------------------------------------------- update

def _moved(prev_tok: StfToken, tok: StfToken) -> float:
    # The box center is a second witness: partial self-occlusion shifts the
    # median but rarely both measures at once.
    return min(euclidean(prev_tok.centroid, tok.centroid), euclidean(_box_center(prev_tok), _box_center(tok)))


def _occluder(node: SceneNode, nodes: dict, visible_now: set, cfg: PipelineConfig) -> Optional[str]:
    c = node.centroid
    m = cfg.occluder_margin
    best = None
    for oid in sorted(visible_now):
        o = nodes[oid]
        if oid == node.object_id:
            continue
        if all(o.lo[i] - m <= c[i] <= o.hi[i] + m for i in range(3)):
            d = euclidean(c, o.centroid)
            if best is None or d < best[0] - TIE_EPS:
                best = (d, oid)
    return None if best is None else best[1]


def _fmt_vec(v, precision: int = 4) -> str:
    return " ".join(fmt(x, precision) for x in v)


def detect_events(prev: Cstg, next_nodes: dict, action: Optional[ActionDirective], t: int,
                  cfg: PipelineConfig = DEFAULT) -> list:
    """Events implied by the transition ``prev.nodes`` -> ``next_nodes``.

    Returned without ids; :func:`update_graph` numbers them.
    """
    events = []
    ref = f"t{t - 1}:{action.describe()}" if action is not None else None
    subject = action.subject_id if action is not None else None
    if action is not None and subject in prev.nodes:
        events.append(("action_executed", subject, prev.nodes[subject].centroid, "agent_action", ref,
                       action.describe()))
    for oid in sorted(next_nodes):
        new = next_nodes[oid]
        old = prev.nodes.get(oid)
        if old is None:
            continue
        if new.visibility == VISIBLE and new.last_known is not old.last_known:
            if old.visibility == OCCLUDED:
                events.append(("occlusion_end", oid, new.centroid, "agent_action" if action else "external",
                               ref, "re-observed"))
            if _moved(old.last_known, new.last_known) > cfg.eps_move:
                dest = "to " + _fmt_vec(new.centroid)
                if oid == subject:
                    events.append(("planned_displacement", oid, old.centroid, "agent_action", ref, dest))
                elif action is not None:
                    events.append(("unintended_collision", oid, old.centroid, "agent_action", ref, dest))
                else:
                    events.append(("unintended_collision", oid, old.centroid, "external", None, dest))
        elif new.visibility == OCCLUDED and old.visibility == VISIBLE:
            if new.occluder_id is not None:
                cause = "agent_action" if action else "external"
                events.append(("occlusion_start", oid, new.centroid, cause, ref if action else None,
                               f"occluded by {new.occluder_id}"))
            else:
                events.append(("occlusion_start", oid, new.centroid, "unknown", None, "no occluder in view"))
    return events


def update_graph(prev: Cstg, incoming: Iterable[StfToken], executed_action: Optional[ActionDirective] = None,
                 cfg: PipelineConfig = DEFAULT,
                 subgoal_check: Optional[Callable[[Cstg, str], bool]] = None) -> Cstg:
    """Fold the tokens observed at step ``prev.current_step + 1`` into the graph.

    ``subgoal_check(graph, note)`` decides whether the executed directive's
    subgoal now holds; a ``subtask_completed`` event is logged the first time
    it does.
    """
    incoming = list(incoming)
    t = prev.current_step + 1
    if not prev.memory:
        return _stateless(incoming, t, cfg)
    assoc = associate_identities(prev, incoming, cfg)
    by_id = {tk.object_id: tk for tk in incoming}
    k = prev.window_k

    nodes = {}
    matched = {nid: by_id[tid] for tid, nid in assoc.assignment.items()}
    for oid, node in prev.nodes.items():
        window = tuple(tk for tk in node.window if tk.timestamp > t - k)
        if oid in matched:
            tok = matched[oid].with_id(oid)
            nodes[oid] = SceneNode(oid, node.descriptor, window + (tok,), tok, VISIBLE, None)
        else:
            nodes[oid] = replace(node, window=window)
    next_id = prev.next_id
    for tid in assoc.new:
        oid = f"obj{next_id}"
        next_id += 1
        tok = by_id[tid].with_id(oid)
        nodes[oid] = SceneNode(oid, tok.descriptor, (tok,), tok, VISIBLE, None)

    visible_now = set(matched) | {oid for oid in nodes if oid not in prev.nodes}
    for oid, node in prev.nodes.items():
        if oid not in matched and node.visibility == VISIBLE:
            nodes[oid] = replace(nodes[oid], visibility=OCCLUDED,
                                 occluder_id=_occluder(node, nodes, visible_now, cfg))

    raw = detect_events(prev, nodes, executed_action, t, cfg)
    base = len(prev.log)
    events = [CausalEvent(base + i, t, *ev) for i, ev in enumerate(raw)]
    g = Cstg(nodes, compute_edges(nodes, cfg), prev.log.append(events), t, k, True, next_id, assoc.notes)

    note = executed_action.subgoal_note if executed_action is not None else ""
    if note and subgoal_check is not None and executed_action.subject_id in nodes:
        done = any(e.kind == "subtask_completed" and e.detail == note for e in g.log.events)
        if not done and subgoal_check(g, note):
            ev = CausalEvent(len(g.log), t, "subtask_completed", executed_action.subject_id,
                             nodes[executed_action.subject_id].centroid, "agent_action",
                             f"t{t - 1}:{executed_action.describe()}", note)
            g = replace(g, log=g.log.append([ev]))
    return g


def _stateless(incoming: list, t: int, cfg: PipelineConfig) -> Cstg:
    """Memory-free graph: only what is visible now, fresh ids, no log."""
    for tk in incoming:
        if tk.timestamp != t:
            raise StaleStep(f"token {tk.object_id} has t={tk.timestamp}, expected {t}")
    nodes = {}
    for i, tk in enumerate(sorted(incoming, key=lambda tk: (tk.descriptor, tk.object_id))):
        oid = f"s{t}o{i + 1}"
        tok = tk.with_id(oid)
        nodes[oid] = SceneNode(oid, tk.descriptor, (tok,), tok, VISIBLE, None)
    return Cstg(nodes, compute_edges(nodes, cfg), MemoryLog((), cfg.window_k), t, cfg.window_k, False, 1)


def append_event(g: Cstg, kind: str, subject_id: str, location, cause: str = "unknown",
                 action_ref: Optional[str] = None, detail: str = "") -> Cstg:
    """Log an event at the graph's current step (no-op without memory)."""
    if not g.memory:
        return g
    ev = CausalEvent(len(g.log), g.current_step, kind, subject_id, Vec3.of(location), cause, action_ref, detail)
    return replace(g, log=g.log.append([ev]))


# ---------------------------------------------------------------- queries

def last_known_pose(g: Cstg, object_id: str):
    """(centroid, shape, timestamp) of the newest token ever seen for the object."""
    tok = g.node(object_id).last_known
    return tok.centroid, tok.shape, tok.timestamp


def first_recorded_pose(g: Cstg, object_id: str) -> Vec3:
    """Where the object was before the log first recorded anything happening to
    it; its current last-known centroid if nothing has."""
    node = g.node(object_id)
    for e in g.log.events:
        if e.subject_id == object_id and e.kind in _POSE_EVENTS:
            return e.location
    return node.centroid


def spatial_context(g: Cstg, cfg: PipelineConfig = DEFAULT, events: bool = True) -> str:
    """Deterministic text rendering of nodes, edges and (optionally) recent events."""
    lines = [f"scene graph (cstg/1) at step {g.current_step}"]
    if not g.nodes:
        lines.append("no objects")
        return "\n".join(lines)
    lines.append(f"objects: {len(g.nodes)}")
    for oid in sorted(g.nodes):
        n = g.nodes[oid]
        lines.append(serialize_token(n.last_known, cfg.precision))
        state = n.visibility
        if n.visibility == OCCLUDED:
            state += f" by {n.occluder_id}" if n.occluder_id else " (occluder unknown)"
        lines.append(f"visibility: {state}")
    lines.append("relations:")
    for e in g.edges:
        tags = ",".join(sorted(e.tags)) or "-"
        lines.append(f"{e.from_id} -> {e.to_id} d={fmt(e.distance, cfg.precision)} "
                     f"offset={_fmt_vec(e.offset, cfg.precision)} tags={tags}")
    if events:
        lines.append(recent_events(g, cfg))
    return "\n".join(lines)


def recent_events(g: Cstg, cfg: PipelineConfig = DEFAULT) -> str:
    recent = g.log.recent(cfg.context_events)
    lines = [f"recent events ({len(recent)} of {len(g.log)}):"]
    lines.extend(e.render(cfg.precision) for e in recent)
    return "\n".join(lines)


def size_accounting(g: Cstg) -> dict:
    """Counts of everything the graph retains."""
    return {
        "nodes": len(g.nodes),
        "window_tokens": sum(len(n.window) for n in g.nodes.values()),
        "last_known_tokens": len(g.nodes),
        "edges": len(g.edges),
        "events": len(g.log),
    }
