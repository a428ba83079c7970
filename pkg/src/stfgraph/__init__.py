"""Geometry-grounded object tokens, a causal spatio-temporal scene graph, and a
precondition-verified planning loop over a deterministic block world."""
from __future__ import annotations

from .config import DEFAULT, PipelineConfig
from .cstg import (
    Cstg,
    associate_identities,
    empty_graph,
    first_recorded_pose,
    last_known_pose,
    relation_query,
    spatial_context,
    update_graph,
)
from .directive import ActionDirective, Pose6DoFAction
from .geometry import (
    CameraModel,
    DepthGrid,
    Mask,
    Pose6DoF,
    ShapeVector,
    Vec3,
    back_project,
    median_centroid,
    patch_grid_iou,
    shape_vector,
)
from .goal import GoalEntry, GoalSpec
from .stf import StfToken, build_token, serialize_token

__all__ = [
    "DEFAULT", "PipelineConfig",
    "Cstg", "associate_identities", "empty_graph", "first_recorded_pose", "last_known_pose",
    "relation_query", "spatial_context", "update_graph",
    "ActionDirective", "Pose6DoFAction",
    "CameraModel", "DepthGrid", "Mask", "Pose6DoF", "ShapeVector", "Vec3",
    "back_project", "median_centroid", "patch_grid_iou", "shape_vector",
    "GoalEntry", "GoalSpec",
    "StfToken", "build_token", "serialize_token",
]
