"""Hollow-interior detection via the discretized opacity field and six-axis
ray enclosure, and filling with raw atomic particles."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from ._kernels import cpu
from .model import SplatModel, covariances, make_model

log = logging.getLogger(__name__)

CULL_RADIUS = 4.5  # in per-axis sigmas; truncation stays below 1e-4 tolerances
_DEGENERATE_FRACTION = 1e-12


class FillError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    resolution: tuple[int, int, int]
    origin: np.ndarray
    cell_size: np.ndarray
    values: np.ndarray  # shape == resolution

    def __post_init__(self):
        if any(r < 1 for r in self.resolution):
            raise FillError("grid resolution components must be >= 1")
        if np.any(self.cell_size <= 0):
            raise FillError("cell_size components must be > 0")
        if self.values.shape != tuple(self.resolution):
            raise FillError("values shape does not match resolution")

    def cell_centers_axis(self, d: int) -> np.ndarray:
        return self.origin[d] + (np.arange(self.resolution[d]) + 0.5) * self.cell_size[d]

    def cell_bounds(self, index) -> tuple[np.ndarray, np.ndarray]:
        i = np.asarray(index)
        lo = self.origin + i * self.cell_size
        return lo, lo + self.cell_size


@dataclass(frozen=True)
class FillConfig:
    grid_resolution: int = 64
    sigma_th: float = 0.1
    particles_per_voxel: int = 8
    init_color: tuple[float, float, float] = (0.5, 0.5, 0.5)
    init_scale_cap_fraction: float = 1e-3
    rng_seed: int = 0
    ray_axes_required: int = 6

    def __post_init__(self):
        if self.sigma_th <= 0:
            raise FillError("sigma_th must be > 0")
        if self.particles_per_voxel < 1:
            raise FillError("particles_per_voxel must be >= 1")
        if not 1 <= self.ray_axes_required <= 6:
            raise FillError("ray_axes_required must be in 1..6")


def _check_degenerate(model: SplatModel):
    floor = _DEGENERATE_FRACTION * model.extent
    bad = np.flatnonzero(model.scales.min(axis=1) < floor)
    if bad.size:
        raise FillError(f"degenerate covariance for particle {int(bad[0])} "
                        f"(scale component < {floor:g})")


def opacity_field_eval(model: SplatModel, x) -> np.ndarray | float:
    """Summed Gaussian opacity field at one or many points.

    Particles whose per-axis distance exceeds CULL_RADIUS sigmas on any axis
    are culled; the truncation stays below 1e-4 absolute.
    """
    _check_degenerate(model)
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    single = np.asarray(x).ndim == 1
    covs = covariances(model)
    inv_covs = np.linalg.inv(covs)
    sig_axis = np.sqrt(np.einsum("nii->ni", covs))
    out = np.zeros(len(pts))
    for pi, pt in enumerate(pts):
        d = pt - model.positions
        keep = np.all(np.abs(d) <= CULL_RADIUS * sig_axis, axis=1)
        if not keep.any():
            continue
        dd = d[keep]
        q = np.einsum("ni,nij,nj->n", dd, inv_covs[keep], dd)
        out[pi] = float(np.sum(model.opacities[keep] * np.exp(-0.5 * q)))
    return float(out[0]) if single else out


def make_grid_for_model(model: SplatModel, resolution: int) -> tuple[np.ndarray, np.ndarray, tuple]:
    lo, hi = model.bbox
    span = np.maximum(hi - lo, 1e-12)
    res = (resolution, resolution, resolution)
    cell = span / resolution
    return lo.astype(np.float64), cell.astype(np.float64), res


def discretize_opacity(model: SplatModel, cfg: FillConfig) -> VoxelGrid:
    """Evaluate the opacity field at every cell center of a grid covering the bbox."""
    if not len(model):
        raise FillError("cannot discretize an empty model")
    _check_degenerate(model)
    origin, cell, res = make_grid_for_model(model, cfg.grid_resolution)
    covs = covariances(model)
    sig_axis = np.sqrt(np.einsum("nii->ni", covs))
    positions = np.ascontiguousarray(model.positions)
    alphas = np.ascontiguousarray(model.opacities)

    isotropic = (np.allclose(model.scales, model.scales[:, :1])
                 and np.allclose(model.rotations[:, 1:], 0.0, atol=1e-12))
    if _kernels.fast is not None:
        if isotropic:
            values = _kernels.fast.opacity_grid_isotropic(
                positions, np.ascontiguousarray(model.scales[:, 0]), alphas,
                origin, cell, *res, CULL_RADIUS)
        else:
            values = _kernels.fast.opacity_grid(
                positions, np.ascontiguousarray(np.linalg.inv(covs)),
                np.ascontiguousarray(sig_axis), alphas,
                origin, cell, *res, CULL_RADIUS)
    else:
        values = cpu.opacity_grid(positions, np.linalg.inv(covs), sig_axis, alphas,
                                  origin, cell, res, CULL_RADIUS)
    return VoxelGrid(resolution=res, origin=origin, cell_size=cell, values=values)


def detect_interior_voxels(grid: VoxelGrid, cfg: FillConfig) -> np.ndarray:
    """Low-opacity cells enclosed along axis-aligned rays.

    A cell qualifies when its value is below sigma_th and at least
    cfg.ray_axes_required of its six axis-aligned rays hit a high-opacity
    cell before leaving the grid. Returns an (M,3) array of cell indices.
    """
    high = grid.values >= cfg.sigma_th
    hits = np.zeros(grid.values.shape, dtype=np.int8)
    for axis in range(3):
        for direction in (1, -1):
            h = high if direction == 1 else np.flip(high, axis=axis)
            # blocked[i] = any high cell strictly beyond i along this ray
            beyond = np.flip(np.cumsum(np.flip(h, axis=axis), axis=axis), axis=axis)
            shifted = np.roll(beyond, -1, axis=axis)
            index = [slice(None)] * 3
            index[axis] = -1
            shifted[tuple(index)] = 0
            blocked = shifted > 0
            if direction == -1:
                blocked = np.flip(blocked, axis=axis)
            hits += blocked.astype(np.int8)
    flagged = (~high) & (hits >= cfg.ray_axes_required)
    return np.argwhere(flagged)


def fill_interior(model: SplatModel, cfg: FillConfig) -> SplatModel:
    """Append particles_per_voxel raw atomic particles in every enclosed voxel.

    New particles are uniform random inside their voxel (seeded), isotropic
    with scale uniform in (0.2, 1.0] x cap, gray by default, fully opaque and
    untrained. Pre-existing particles are preserved verbatim, in order.
    """
    grid = discretize_opacity(model, cfg)
    flagged = detect_interior_voxels(grid, cfg)
    if len(flagged) == 0:
        log.info("fill_interior: no enclosed low-opacity voxels, model unchanged")
        meta = dict(model.metadata)
        meta["filled_particle_range"] = (len(model), len(model))
        return replace(model, metadata=meta)

    rng = np.random.default_rng(cfg.rng_seed)
    # deterministic voxel order: argwhere is already lexicographic
    k = cfg.particles_per_voxel
    lo = grid.origin + flagged * grid.cell_size
    lo = np.repeat(lo, k, axis=0)
    pos = lo + rng.random((len(lo), 3)) * grid.cell_size
    cap = cfg.init_scale_cap_fraction * model.extent
    s = (1.0 - 0.8 * rng.random(len(lo))) * cap  # uniform in (0.2, 1.0] x cap
    n_new = len(pos)

    meta = dict(model.metadata)
    meta["filled_particle_range"] = (len(model), len(model) + n_new)
    return make_model(
        positions=np.vstack([model.positions, pos]),
        scales=np.vstack([model.scales, np.repeat(s.reshape(-1, 1), 3, axis=1)]),
        rotations=np.vstack([model.rotations, np.tile([1.0, 0, 0, 0], (n_new, 1))]),
        colors=np.vstack([model.colors, np.tile(np.asarray(cfg.init_color), (n_new, 1))]),
        opacities=np.concatenate([model.opacities, np.ones(n_new)]),
        trained=np.concatenate([model.trained, np.zeros(n_new, dtype=bool)]),
        metadata=meta,
    )


def dump_grid(grid: VoxelGrid) -> bytes:
    """Flat binary dump: 9 float64 header (resolution, origin, cell_size), then
    float32 values, x-fastest."""
    header = struct.pack(
        "<9d", *[float(v) for v in grid.resolution], *grid.origin, *grid.cell_size)
    # values array is indexed [x, y, z]; x-fastest means x varies quickest
    body = np.ascontiguousarray(np.transpose(grid.values, (2, 1, 0)), dtype=np.float32)
    return header + body.tobytes()


def load_grid(data: bytes) -> VoxelGrid:
    vals = struct.unpack_from("<9d", data)
    res = tuple(int(v) for v in vals[:3])
    origin = np.array(vals[3:6])
    cell = np.array(vals[6:9])
    body = np.frombuffer(data[72:], dtype=np.float32).astype(np.float64)
    values = np.transpose(body.reshape(res[2], res[1], res[0]), (2, 1, 0))
    return VoxelGrid(resolution=res, origin=origin, cell_size=cell, values=values)
