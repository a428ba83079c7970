"""Spatio-temporal fusion tokens: per-object records binding selected visual
evidence to a median centroid, a shape vector and a step index.

Text format (``stf/1``), one ``key: value`` pair per line::

    stf/1
    id: obj3
    descriptor: red block
    t: 4
    centroid: <x> <y> <z>
    shape.x: <mu> <sigma> <min> <max>
    shape.y: ...
    shape.z: ...
    evidence: patches=<count> norm=<aggregate L2 norm>

Numbers use fixed decimals (default 4) with round-half-even; ``-0`` prints as ``0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import DEFAULT, PipelineConfig
from .errors import DimensionMismatch, EmptyRegion
from .geometry import (
    CameraModel,
    DepthGrid,
    Mask,
    ShapeVector,
    Vec3,
    back_project,
    median_centroid,
    patch_edges,
    patch_grid_iou,
    shape_vector,
)

HEADER = "stf/1"


@dataclass(frozen=True, eq=False)
class PatchFeatureGrid:
    features: np.ndarray  # (grid_n, grid_n, dim)
    source_dims: tuple  # (width, height)

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if f.ndim != 3 or f.shape[0] != f.shape[1] or f.shape[2] < 1:
            raise DimensionMismatch(f"bad feature grid shape {f.shape}")
        object.__setattr__(self, "features", f)

    @property
    def grid_n(self) -> int:
        return self.features.shape[0]


def patch_features(rgb: np.ndarray, mask: Mask, grid_n: int = 16) -> PatchFeatureGrid:
    """Synthetic patch descriptors of the masked image: mean RGB plus patch center.

    Stands in for a learned visual encoder; 5 numbers per patch.
    """
    h, w = mask.bits.shape
    if rgb.shape[:2] != (h, w):
        raise DimensionMismatch("image and mask sizes differ")
    re, ce = patch_edges(h, grid_n), patch_edges(w, grid_n)
    sums = np.zeros((grid_n, grid_n, 3))
    rows, cols = np.nonzero(mask.bits)
    if rows.size:
        # only the patches spanned by the mask can have non-zero sums
        r0 = int(np.searchsorted(re, rows.min(), side="right")) - 1
        r1 = int(np.searchsorted(re, rows.max(), side="right"))
        c0 = int(np.searchsorted(ce, cols.min(), side="right")) - 1
        c1 = int(np.searchsorted(ce, cols.max(), side="right"))
        r1, c1 = min(r1, grid_n), min(c1, grid_n)
        win = (slice(re[r0], re[r1]), slice(ce[c0], ce[c1]))
        masked = rgb[win].astype(np.float64) / 255.0 * mask.bits[win][..., None]
        sub = np.add.reduceat(masked, re[r0:r1] - re[r0], axis=0)
        sums[r0:r1, c0:c1] = np.add.reduceat(sub, ce[c0:c1] - ce[c0], axis=1)
    areas = np.outer(np.diff(re), np.diff(ce))[..., None]
    centers = (np.arange(grid_n) + 0.5) / grid_n
    rr, cc = np.meshgrid(centers, centers, indexing="ij")
    feats = np.concatenate([sums / areas, rr[..., None], cc[..., None]], axis=2)
    return PatchFeatureGrid(feats, (w, h))


@dataclass(frozen=True, eq=False)
class VisualEvidence:
    selected: tuple  # ((row, col, feature tuple), ...)
    aggregate: tuple
    fallback: bool = False

    def __eq__(self, other):
        return isinstance(other, VisualEvidence) and self.to_dict() == other.to_dict()

    def norm(self) -> float:
        return math.sqrt(math.fsum(v * v for v in self.aggregate))

    def to_dict(self) -> dict:
        return {
            "selected": [[r, c, list(f)] for r, c, f in self.selected],
            "aggregate": list(self.aggregate),
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VisualEvidence":
        sel = tuple((int(r), int(c), tuple(float(v) for v in f)) for r, c, f in d["selected"])
        return cls(sel, tuple(float(v) for v in d["aggregate"]), bool(d["fallback"]))


def select_patches(grid: PatchFeatureGrid, mask: Mask, iou_threshold: float) -> VisualEvidence:
    """Keep patches whose mask coverage exceeds the threshold; mean their features.

    When nothing qualifies the single best-covered patch is kept (lowest
    (row, col) on ties) and the evidence is flagged as a fallback.
    """
    if tuple(grid.source_dims) != (mask.width, mask.height):
        raise DimensionMismatch(f"grid built for {grid.source_dims}, mask is {(mask.width, mask.height)}")
    scores = patch_grid_iou(mask, grid.grid_n)
    rows, cols = np.nonzero(scores > iou_threshold)
    fallback = rows.size == 0
    if fallback:
        flat = int(np.argmax(scores))  # first maximum in row-major order
        rows, cols = np.array([flat // grid.grid_n]), np.array([flat % grid.grid_n])
    feats = grid.features[rows, cols]
    selected = tuple((int(r), int(c), tuple(float(v) for v in f)) for r, c, f in zip(rows, cols, feats))
    return VisualEvidence(selected, tuple(float(v) for v in feats.mean(axis=0)), fallback)


@dataclass(frozen=True, eq=False)
class StfToken:
    object_id: str
    descriptor: str
    evidence: VisualEvidence
    centroid: Vec3
    shape: ShapeVector
    timestamp: int

    def __eq__(self, other):
        return isinstance(other, StfToken) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash((self.object_id, self.timestamp, self.centroid))

    def with_id(self, object_id: str) -> "StfToken":
        return StfToken(object_id, self.descriptor, self.evidence, self.centroid, self.shape, self.timestamp)

    def box_contains_centroid(self, eps: float = DEFAULT.eps_box) -> bool:
        return all(
            self.shape.lo[i] - eps <= self.centroid[i] <= self.shape.hi[i] + eps for i in range(3)
        )

    def to_dict(self) -> dict:
        s = self.shape
        return {
            "id": self.object_id,
            "descriptor": self.descriptor,
            "t": self.timestamp,
            "centroid": list(self.centroid),
            "shape": {"mu": list(s.mu), "sigma": list(s.sigma), "min": list(s.lo), "max": list(s.hi)},
            "evidence": self.evidence.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StfToken":
        s = d["shape"]
        shape = ShapeVector(Vec3.of(s["mu"]), Vec3.of(s["sigma"]), Vec3.of(s["min"]), Vec3.of(s["max"]))
        return cls(d["id"], d["descriptor"], VisualEvidence.from_dict(d["evidence"]),
                   Vec3.of(d["centroid"]), shape, int(d["t"]))


def build_token(object_id, descriptor, mask: Mask, depth: DepthGrid, cam: CameraModel,
                grid: PatchFeatureGrid, t: int, cfg: PipelineConfig = DEFAULT) -> StfToken:
    """Fuse one object's evidence and geometry.  Raises EmptyRegion when the
    object is not observed (callers treat that as "no token this step")."""
    cloud = back_project(mask, depth, cam)
    evidence = select_patches(grid, mask, cfg.iou_threshold)
    return StfToken(object_id, descriptor, evidence, median_centroid(cloud), shape_vector(cloud), int(t))


def build_token_2d(object_id, descriptor, mask: Mask, cam: CameraModel, grid: PatchFeatureGrid,
                   t: int, cfg: PipelineConfig = DEFAULT) -> StfToken:
    """Geometry-free token: the image-space box center and corners lifted to a
    fixed depth.  Used by the ablation that removes metric grounding."""
    rows, cols = np.nonzero(mask.bits)
    if rows.size == 0:
        raise EmptyRegion("empty mask")
    d = cfg.naive_depth
    r0, r1, c0, c1 = rows.min(), rows.max(), cols.min(), cols.max()
    pix = np.array([[(c0 + c1) / 2, (r0 + r1) / 2], [c0, r0], [c1, r1]], dtype=np.float64)
    p_cam = np.stack([(pix[:, 0] - cam.cx) * d / cam.fx, (pix[:, 1] - cam.cy) * d / cam.fy,
                      np.full(3, d)], axis=1)
    p = p_cam @ cam.rotation.T + cam.translation
    lo, hi = p.min(axis=0), p.max(axis=0)
    shape = ShapeVector(Vec3.of(p[0]), Vec3.of((hi - lo) / 4), Vec3.of(lo), Vec3.of(hi))
    evidence = select_patches(grid, mask, cfg.iou_threshold)
    return StfToken(object_id, descriptor, evidence, Vec3.of(p[0]), shape, int(t))


def fmt(value: float, precision: int) -> str:
    s = f"{value:.{precision}f}"
    if s.startswith("-") and float(s) == 0.0:
        s = s[1:]
    return s


def serialize_token(token: StfToken, precision: int = DEFAULT.precision) -> str:
    f = lambda v: fmt(v, precision)  # noqa: E731
    lines = [
        HEADER,
        f"id: {token.object_id}",
        f"descriptor: {token.descriptor}",
        f"t: {token.timestamp}",
        "centroid: " + " ".join(f(v) for v in token.centroid),
    ]
    for a in "xyz":
        lines.append(f"shape.{a}: " + " ".join(f(v) for v in token.shape.axis(a)))
    lines.append(f"evidence: patches={len(token.evidence.selected)} norm={f(token.evidence.norm())}")
    return "\n".join(lines)


def parse_token_text(text: str) -> dict:
    """Inverse of :func:`serialize_token` for the fields it carries."""
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != HEADER:
        raise ValueError("missing stf/1 header")
    out: dict = {}
    for line in lines[1:]:
        key, _, value = line.partition(": ")
        if key == "id":
            out["id"] = value
        elif key == "descriptor":
            out["descriptor"] = value
        elif key == "t":
            out["t"] = int(value)
        elif key == "centroid":
            out["centroid"] = tuple(float(v) for v in value.split())
        elif key.startswith("shape."):
            out[key] = tuple(float(v) for v in value.split())
        elif key == "evidence":
            parts = dict(p.split("=") for p in value.split())
            out["patches"] = int(parts["patches"])
            out["norm"] = float(parts["norm"])
        else:
            raise ValueError(f"unknown key {key!r}")
    return out
