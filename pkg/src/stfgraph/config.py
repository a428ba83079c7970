"""Tunable constants for perception, graph maintenance, planning and simulation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class PipelineConfig:
    # tokens
    grid_n: int = 16
    iou_threshold: float = 0.5
    eps_box: float = 1e-6
    precision: int = 4
    # graph
    window_k: int = 3
    d_assoc: float = 0.10
    eps_move: float = 0.01
    occluder_margin: float = 0.02
    gap_max: float = 0.02
    near_dist: float = 0.10
    context_events: int = 20
    # planning
    f_stab: float = 0.5
    h_app: float = 0.02
    max_replans: int = 3
    tol_pos: float = 0.02
    workspace_lo: tuple = (-0.42, -0.25, -0.01)
    workspace_hi: tuple = (0.42, 0.25, 0.45)
    # simulation
    r_grasp: float = 0.03
    voxel: float = 0.005
    sigma_noise: float = 0.0
    lift_z: float = 0.30
    # ablations
    disable_stf_geometry: bool = False
    disable_cstg_memory: bool = False
    naive_depth: float = 1.3

    def with_(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["workspace_lo"] = list(self.workspace_lo)
        d["workspace_hi"] = list(self.workspace_hi)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        for key in ("workspace_lo", "workspace_hi"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


DEFAULT = PipelineConfig()
