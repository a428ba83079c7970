"""Z-buffered ray casting of axis-aligned boxes into RGB, depth and instance masks."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..geometry import CameraModel, DepthGrid, Mask
from .world import WorldState, color_of

BACKGROUND = (200, 200, 200)


@dataclass(frozen=True)
class RenderConfig:
    width: int = 256
    height: int = 192
    focal: float = 400.0
    pitch_deg: float = 15.0
    distance: float = 1.3
    look_at: tuple = (0.0, 0.0, 0.1)
    # "midchord": depth of the midpoint of the ray's chord through the visible
    # box, so a box's back-projected pixels straddle its center;
    # "surface": depth of the first hit.
    depth_mode: str = "midchord"
    sigma_noise: float = 0.0


def make_camera(rc: RenderConfig = RenderConfig()) -> CameraModel:
    p = math.radians(rc.pitch_deg)
    forward = np.array([0.0, math.cos(p), -math.sin(p)])
    right = np.array([1.0, 0.0, 0.0])
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward], axis=1)
    center = np.asarray(rc.look_at, dtype=np.float64) - rc.distance * forward
    return CameraModel(rc.focal, rc.focal, rc.width / 2.0, rc.height / 2.0, rot, center)


@dataclass(frozen=True, eq=False)
class Observation:
    rgb: np.ndarray  # (H, W, 3) uint8
    depth: DepthGrid
    masks: dict  # object id -> Mask, pairwise disjoint
    cam: CameraModel
    descriptors: dict  # object id -> descriptor text

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.rgb.tobytes())
        h.update(self.depth.depth.tobytes())
        return h.hexdigest()[:16]


def _ray_dirs(cam: CameraModel, width: int, height: int) -> np.ndarray:
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    d_cam = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    return d_cam @ cam.rotation.T  # world directions, unit camera-z component


def _pixel_window(cam: CameraModel, lo: np.ndarray, hi: np.ndarray, width: int, height: int):
    corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    uv = cam.project(corners)
    u0 = max(int(np.floor(uv[:, 0].min())) - 1, 0)
    u1 = min(int(np.ceil(uv[:, 0].max())) + 2, width)
    v0 = max(int(np.floor(uv[:, 1].min())) - 1, 0)
    v1 = min(int(np.ceil(uv[:, 1].max())) + 2, height)
    return v0, v1, u0, u1


@lru_cache(maxsize=8)
def _default_rays(rc: RenderConfig):
    cam = make_camera(rc)
    with np.errstate(divide="ignore"):
        inv = 1.0 / _ray_dirs(cam, rc.width, rc.height)
    inv.setflags(write=False)
    return cam, inv


def render(w: WorldState, rc: RenderConfig = RenderConfig(), cam: CameraModel = None) -> Observation:
    if cam is None:
        cam, inv = _default_rays(rc)
    else:
        with np.errstate(divide="ignore"):
            inv = 1.0 / _ray_dirs(cam, rc.width, rc.height)
    origin = cam.translation
    visible = [oid for oid in sorted(w.objects) if oid not in w.contained]
    shape = (rc.height, rc.width)
    t_near = np.full(shape, np.inf)
    t_far = np.zeros(shape)
    owner = np.full(shape, -1)
    for k, oid in enumerate(visible):
        o = w.objects[oid]
        c, h = np.asarray(o.center), np.asarray(o.half_extents)
        v0, v1, u0, u1 = _pixel_window(cam, c - h, c + h, rc.width, rc.height)
        if v0 >= v1 or u0 >= u1:
            continue
        sub = inv[v0:v1, u0:u1]
        with np.errstate(invalid="ignore"):
            t1 = (c - h - origin) * sub
            t2 = (c + h - origin) * sub
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tmin = np.minimum(t1, t2).max(axis=-1)
        tmax = np.maximum(t1, t2).min(axis=-1)
        near = t_near[v0:v1, u0:u1]
        hit = (tmax >= tmin) & (tmin > 0) & (tmin < near)
        near[hit] = tmin[hit]
        t_far[v0:v1, u0:u1][hit] = tmax[hit]
        owner[v0:v1, u0:u1][hit] = k
    valid = owner >= 0
    if rc.depth_mode == "midchord":
        depth = np.where(valid, 0.5 * (t_near + t_far), 0.0)
    elif rc.depth_mode == "surface":
        depth = np.where(valid, t_near, 0.0)
    else:
        raise ValueError(f"unknown depth mode {rc.depth_mode!r}")
    if rc.sigma_noise > 0:
        rng = np.random.default_rng([w.rng_seed, w.step])
        depth = np.where(valid, depth + rng.normal(0.0, rc.sigma_noise, shape), 0.0)
    rgb = np.empty(shape + (3,), dtype=np.uint8)
    rgb[:] = BACKGROUND
    masks = {}
    for k, oid in enumerate(visible):
        sel = owner == k
        rgb[sel] = color_of(w.objects[oid].descriptor)
        masks[oid] = Mask(sel)
    for oid in w.contained:
        masks[oid] = Mask(np.zeros(shape, dtype=bool))
    return Observation(
        rgb=rgb,
        depth=DepthGrid(depth, valid),
        masks=masks,
        cam=cam,
        descriptors={oid: o.descriptor for oid, o in w.objects.items()},
    )
