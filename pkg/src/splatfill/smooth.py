"""Inverse-distance recoloring of untrained particles from trained neighbors
bucketed in a voxel grid over the model bbox."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import SplatModel

log = logging.getLogger(__name__)


class SmoothError(ValueError):
    pass


@dataclass(frozen=True)
class SmoothConfig:
    grid_resolution: int = 128
    max_voxel_fraction: float = 0.01
    neighbor_fallback: bool = False  # consult the 26-neighborhood when a voxel has no trained particle

    def __post_init__(self):
        if self.grid_resolution < 2:
            raise SmoothError("grid_resolution must be >= 2")


@dataclass(frozen=True)
class SmoothReport:
    trained: int
    untrained: int
    untrained_isolated: int  # untrained particles left unchanged (no trained source found)
    max_voxel_occupancy: float


def _voxel_indices(model: SplatModel, resolution: int) -> np.ndarray:
    lo, hi = model.bbox
    span = np.maximum(hi - lo, 1e-12)
    ijk = np.floor((model.positions - lo) / span * resolution).astype(np.int64)
    np.clip(ijk, 0, resolution - 1, out=ijk)
    return ijk


def _bucket(ijk: np.ndarray, resolution: int) -> dict[int, np.ndarray]:
    flat = (ijk[:, 0] * resolution + ijk[:, 1]) * resolution + ijk[:, 2]
    order = np.argsort(flat, kind="stable")
    keys, starts = np.unique(flat[order], return_index=True)
    buckets = {}
    for i, key in enumerate(keys):
        end = starts[i + 1] if i + 1 < len(starts) else len(order)
        buckets[int(key)] = order[starts[i]:end]
    return buckets


def _idw_color(pos: np.ndarray, src_pos: np.ndarray, src_col: np.ndarray, delta: float) -> np.ndarray:
    d = np.linalg.norm(src_pos - pos, axis=1)
    w = 1.0 / np.maximum(d, delta)
    # convex combination; clip the last-ulp rounding excursions
    return np.clip((w[:, None] * src_col).sum(axis=0) / w.sum(), 0.0, 1.0)


def smooth(model: SplatModel, cfg: SmoothConfig) -> tuple[SplatModel, SmoothReport]:
    """Recolor untrained particles from trained ones in the same voxel.

    Colors become inverse-distance-weighted averages (distance floored at
    1e-9 x extent). Untrained particles never contribute to averages and
    trained particles are never modified. Returns the new model plus a
    report; warns when any voxel holds more than max_voxel_fraction of all
    particles.
    """
    n = len(model)
    if n == 0:
        return model, SmoothReport(0, 0, 0, 0.0)
    res = cfg.grid_resolution
    ijk = _voxel_indices(model, res)
    trained = model.trained
    delta = 1e-9 * model.extent

    buckets = _bucket(ijk, res)
    occupancy = max(len(v) for v in buckets.values()) / n
    if occupancy > cfg.max_voxel_fraction:
        log.warning("voxel occupancy %.4f exceeds configured max %.4f",
                    occupancy, cfg.max_voxel_fraction)

    trained_in: dict[int, np.ndarray] = {}
    for key, members in buckets.items():
        t = members[trained[members]]
        if t.size:
            trained_in[key] = t

    colors = model.colors.copy()
    isolated = 0
    untrained_idx = np.flatnonzero(~trained)
    for i in untrained_idx:
        key = int((ijk[i, 0] * res + ijk[i, 1]) * res + ijk[i, 2])
        src = trained_in.get(key)
        if src is None and cfg.neighbor_fallback:
            parts = []
            for dx in (-1, 0, 1):
                for dy in (-1, 0, 1):
                    for dz in (-1, 0, 1):
                        x, y, z = ijk[i, 0] + dx, ijk[i, 1] + dy, ijk[i, 2] + dz
                        if 0 <= x < res and 0 <= y < res and 0 <= z < res:
                            t = trained_in.get(int((x * res + y) * res + z))
                            if t is not None:
                                parts.append(t)
            if parts:
                src = np.concatenate(parts)
        if src is None:
            isolated += 1
            continue
        colors[i] = _idw_color(model.positions[i], model.positions[src], model.colors[src], delta)

    report = SmoothReport(
        trained=int(trained.sum()),
        untrained=int(len(untrained_idx)),
        untrained_isolated=isolated,
        max_voxel_occupancy=float(occupancy),
    )
    return model.with_colors(colors), report


def untrained_report(model: SplatModel, cfg: SmoothConfig | None = None) -> dict:
    """Counts of trained / untrained / untrained-isolated particles.

    Isolation is judged against the smoothing grid (and its 26-neighborhood
    when the fallback is enabled in `cfg`).
    """
    cfg = cfg or SmoothConfig()
    n = len(model)
    if n == 0:
        return {"trained": 0, "untrained": 0, "untrained_isolated": 0}
    res = cfg.grid_resolution
    ijk = _voxel_indices(model, res)
    buckets = _bucket(ijk, res)
    trained_keys = {k for k, members in buckets.items() if model.trained[members].any()}
    isolated = 0
    for i in np.flatnonzero(~model.trained):
        found = False
        offsets = [(0, 0, 0)]
        if cfg.neighbor_fallback:
            offsets = [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)]
        for dx, dy, dz in offsets:
            x, y, z = ijk[i, 0] + dx, ijk[i, 1] + dy, ijk[i, 2] + dz
            if 0 <= x < res and 0 <= y < res and 0 <= z < res:
                if int((x * res + y) * res + z) in trained_keys:
                    found = True
                    break
        if not found:
            isolated += 1
    return {
        "trained": int(model.trained.sum()),
        "untrained": int((~model.trained).sum()),
        "untrained_isolated": isolated,
    }
