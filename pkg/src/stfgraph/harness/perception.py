"""Observation -> token set.  Masks and depth come straight from the renderer;
simulator ids are not passed on (tokens get per-frame detection ids)."""
from __future__ import annotations

from ..config import DEFAULT, PipelineConfig
from ..errors import EmptyRegion
from ..stf import build_token, build_token_2d, patch_features


def detection_order(obs) -> list:
    """Simulator ids with a non-empty mask, by descriptor then image position."""
    keyed = []
    for sid, m in obs.masks.items():
        if m.popcount() == 0:
            continue
        r, c = m.pixel_centroid()
        keyed.append((obs.descriptors[sid], c, r, sid))
    return [k[-1] for k in sorted(keyed)]


def perceive(obs, t: int, cfg: PipelineConfig = DEFAULT, provenance: dict = None) -> list:
    """Tokens for every object visible in ``obs`` at step ``t``.

    Objects whose mask has no valid depth are skipped (not observed this step).
    If ``provenance`` is given it is filled with detection id -> simulator id.
    """
    tokens = []
    for k, sid in enumerate(detection_order(obs)):
        mask = obs.masks[sid]
        det = f"d{k}"
        grid = patch_features(obs.rgb, mask, cfg.grid_n)
        try:
            if cfg.disable_stf_geometry:
                tok = build_token_2d(det, obs.descriptors[sid], mask, obs.cam, grid, t, cfg)
            else:
                tok = build_token(det, obs.descriptors[sid], mask, obs.depth, obs.cam, grid, t, cfg)
        except EmptyRegion:
            continue
        tokens.append(tok)
        if provenance is not None:
            provenance[det] = sid
    return tokens
