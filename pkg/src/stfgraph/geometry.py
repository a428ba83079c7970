"""Metric primitives: back-projection, robust centroids, shape statistics, poses,
and mask-to-patch overlap.

Point clouds are ``(N, 3)`` float64 arrays in meters.  All functions here are
pure and allocate fresh arrays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DimensionMismatch, EmptyRegion


class Vec3(NamedTuple):
    x: float
    y: float
    z: float

    @classmethod
    def of(cls, seq) -> "Vec3":
        x, y, z = (float(v) for v in seq)
        return cls(x, y, z)

    def __add__(self, other):  # tuple concatenation is never wanted here
        return Vec3(self.x + other[0], self.y + other[1], self.z + other[2])

    def __sub__(self, other):
        return Vec3(self.x - other[0], self.y - other[1], self.z - other[2])

    def __neg__(self):
        return Vec3(-self.x, -self.y, -self.z)

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True, eq=False)
class Mask:
    bits: np.ndarray  # (height, width) bool

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=bool)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise DimensionMismatch(f"mask must be a non-empty 2-D grid, got {b.shape}")
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    def popcount(self) -> int:
        return int(self.bits.sum())

    def pixel_centroid(self) -> tuple[int, int]:
        """(row, col) of the mask's mean pixel, rounded."""
        rows, cols = np.nonzero(self.bits)
        if rows.size == 0:
            raise EmptyRegion("empty mask has no centroid")
        return int(round(rows.mean())), int(round(cols.mean()))


@dataclass(frozen=True, eq=False)
class DepthGrid:
    depth: np.ndarray  # (height, width) meters
    valid: np.ndarray  # (height, width) bool

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool) & (d > 0)
        if d.shape != v.shape:
            raise DimensionMismatch("depth and validity grids differ in shape")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole intrinsics plus a camera-to-world rigid transform.

    Camera axes: x right, y down, z forward.  ``rotation`` maps camera-frame
    vectors into the world frame; ``translation`` is the camera center in world.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray = None
    translation: np.ndarray = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        r = np.eye(3) if self.rotation is None else np.asarray(self.rotation, dtype=np.float64)
        t = np.zeros(3) if self.translation is None else np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise DimensionMismatch("extrinsic must be a 3x3 rotation and a 3-vector")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def project(self, points: np.ndarray) -> np.ndarray:
        """World points (N,3) -> pixel coordinates (N,2) as (u, v) floats."""
        p_cam = (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation
        u = p_cam[:, 0] / p_cam[:, 2] * self.fx + self.cx
        v = p_cam[:, 1] / p_cam[:, 2] * self.fy + self.cy
        return np.stack([u, v], axis=1)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    frame_tag: str = "world"

    def __len__(self):
        return int(self.points.shape[0])


@dataclass(frozen=True)
class ShapeVector:
    """Per-axis (mean, population std, min, max) of an object's point cloud."""

    mu: Vec3
    sigma: Vec3
    lo: Vec3
    hi: Vec3

    def axis(self, a: str) -> tuple[float, float, float, float]:
        i = "xyz".index(a)
        return self.mu[i], self.sigma[i], self.lo[i], self.hi[i]

    def half_extents(self) -> Vec3:
        return Vec3.of((np.asarray(self.hi) - np.asarray(self.lo)) / 2.0)

    def numbers(self) -> list[float]:
        out = []
        for a in "xyz":
            out.extend(self.axis(a))
        return out


@dataclass(frozen=True)
class Pose6DoF:
    position: Vec3
    orientation: tuple = (1.0, 0.0, 0.0, 0.0)  # unit quaternion (w, x, y, z)

    def __post_init__(self):
        q = tuple(float(v) for v in self.orientation)
        n = math.sqrt(sum(v * v for v in q))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {n} is not 1")
        if not all(math.isfinite(v) for v in self.position):
            raise ValueError("pose position must be finite")
        object.__setattr__(self, "position", Vec3.of(self.position))
        object.__setattr__(self, "orientation", q)


# Gripper pointing straight down: 180 degrees about world x.
TOP_DOWN = (0.0, 1.0, 0.0, 0.0)


def back_project(mask: Mask, depth: DepthGrid, cam: CameraModel) -> PointCloud:
    """World-frame points for every mask pixel with valid depth, row-major order."""
    if mask.bits.shape != depth.depth.shape:
        raise DimensionMismatch(f"mask {mask.bits.shape} vs depth {depth.depth.shape}")
    rows, cols = np.nonzero(mask.bits & depth.valid)
    if rows.size == 0:
        raise EmptyRegion("no mask pixel carries valid depth")
    z = depth.depth[rows, cols]
    p_cam = np.empty((rows.size, 3))
    p_cam[:, 0] = (cols - cam.cx) * z / cam.fx
    p_cam[:, 1] = (rows - cam.cy) * z / cam.fy
    p_cam[:, 2] = z
    return PointCloud(p_cam @ cam.rotation.T + cam.translation, "world")


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.size == 0:
        raise EmptyRegion("empty point cloud")
    return pts.reshape(-1, 3)


def median_centroid(cloud) -> Vec3:
    # np.median averages the two central order statistics for even counts
    return Vec3.of(np.median(_points(cloud), axis=0))


def shape_vector(cloud) -> ShapeVector:
    pts = _points(cloud)
    return ShapeVector(
        mu=Vec3.of(pts.mean(axis=0)),
        sigma=Vec3.of(pts.std(axis=0)),
        lo=Vec3.of(pts.min(axis=0)),
        hi=Vec3.of(pts.max(axis=0)),
    )


def patch_edges(length: int, grid_n: int) -> np.ndarray:
    """Cell boundaries: floor-sized cells, the remainder absorbed by the last one."""
    step = length // grid_n
    return np.array([i * step for i in range(grid_n)] + [length])


def patch_grid_iou(mask: Mask, grid_n: int) -> np.ndarray:
    """Fraction of each patch cell covered by the mask, as a (grid_n, grid_n) grid."""
    if grid_n < 1:
        raise ValueError("grid_n must be >= 1")
    h, w = mask.bits.shape
    if h < grid_n or w < grid_n:
        raise DimensionMismatch(f"{w}x{h} mask is smaller than a {grid_n}x{grid_n} grid")
    re, ce = patch_edges(h, grid_n), patch_edges(w, grid_n)
    counts = np.add.reduceat(np.add.reduceat(mask.bits.astype(np.int64), re[:-1], axis=0), ce[:-1], axis=1)
    areas = np.outer(np.diff(re), np.diff(ce))
    return counts / areas


def euclidean(a, b) -> float:
    return math.sqrt(sum((float(q) - float(p)) ** 2 for p, q in zip(a, b)))


def offset(a, b) -> Vec3:
    """Directional offset from ``a`` to ``b``."""
    return Vec3(b[0] - a[0], b[1] - a[1], b[2] - a[2])
