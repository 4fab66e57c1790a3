"""Deterministic forward rasterizer with per-pixel depth and blend weights.

Projection convention: a particle with 3D covariance S is projected through
the camera Jacobian J and world-to-camera rotation W to the 2D covariance
S' = J W S W^T J^T + 0.3 I (the EWA screen-space low-pass). Its influence on
a pixel is sigma = alpha * exp(-0.5 d^T S'^-1 d) with d in pixel units, and
pixels are composited front to back:

    C = sum_i c_i sigma_i prod_{j<i} (1 - sigma_j) + T_final * background

Depth is the blend-weight-renormalized mean of particle camera depths, and
0 where nothing rendered. Visible particles are depth-sorted with ties broken
by ascending particle index, so rendering is bit-deterministic per backend.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import cpu
from .camera import Camera
from .cutplane import CutPlane
from .model import SplatModel, covariances

TILE_SIZE = 16
_FOOTPRINT_CUT = 1e-4


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class VisibilityMask:
    """Selects which particles take part in a render.

    kind 'all' keeps everything, 'plane' keeps a slab or half-space around a
    cut plane, 'indices' keeps an explicit index set. Selection is a pure
    function of particle position.
    """

    kind: str = "all"
    plane: CutPlane | None = None
    indices: np.ndarray | None = None

    def select(self, model: SplatModel) -> np.ndarray:
        if self.kind == "all":
            return np.ones(len(model), dtype=bool)
        if self.kind == "plane":
            d = self.plane.signed_distance(model.positions)
            if self.plane.mode == "slab":
                return np.abs(d) <= self.plane.slab_half_width
            return d <= self.plane.slab_half_width
        if self.kind == "indices":
            keep = np.zeros(len(model), dtype=bool)
            keep[self.indices] = True
            return keep
        raise RenderError(f"unknown mask kind {self.kind!r}")


MASK_ALL = VisibilityMask()


def make_cut_mask(plane: CutPlane) -> VisibilityMask:
    return VisibilityMask(kind="plane", plane=plane)


@dataclass(frozen=True)
class RenderOutput:
    rgb: np.ndarray
    depth: np.ndarray
    alpha: np.ndarray  # per-pixel sum of blend weights
    contrib: tuple | None  # (pixel_flat_index, particle_index, weight) arrays


def project_particles(model: SplatModel, cam: Camera, selected: np.ndarray):
    """Project selected particles: means, conics, rects, depths, kept indices.

    Particles behind the near plane or beyond the far plane are skipped.
    Output is depth-sorted (ties by ascending particle index).
    """
    idx = np.flatnonzero(selected)
    if idx.size == 0:
        return None
    rot, pos = cam.world_to_cam()
    cam_pts = (model.positions[idx] - pos) @ rot.T
    z = cam_pts[:, 2]
    keep = (z > cam.near) & (z < cam.far)
    idx, cam_pts, z = idx[keep], cam_pts[keep], z[keep]
    if idx.size == 0:
        return None
    f = cam.focal
    u = f * cam_pts[:, 0] / z + (cam.width - 1) / 2.0
    v = f * cam_pts[:, 1] / z + (cam.height - 1) / 2.0
    if not (np.isfinite(u).all() and np.isfinite(v).all()):
        bad = int(idx[~(np.isfinite(u) & np.isfinite(v))][0])
        raise RenderError(f"non-finite projection for particle {bad}")

    cov3d = covariances(model, idx)
    cov_cam = rot @ cov3d @ rot.T
    x, y = cam_pts[:, 0], cam_pts[:, 1]
    j = np.zeros((len(idx), 2, 3))
    j[:, 0, 0] = f / z
    j[:, 0, 2] = -f * x / (z * z)
    j[:, 1, 1] = f / z
    j[:, 1, 2] = -f * y / (z * z)
    cov2d = j @ cov_cam @ np.swapaxes(j, 1, 2)
    cov2d[:, 0, 0] += 0.3
    cov2d[:, 1, 1] += 0.3

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    alphas = model.opacities[idx]
    vis = alphas > _FOOTPRINT_CUT
    radius = np.zeros(len(idx))
    radius[vis] = np.sqrt(2.0 * np.log(alphas[vis] / _FOOTPRINT_CUT) * lam_max[vis])

    x0 = np.floor(u - radius).astype(np.int32)
    x1 = np.ceil(u + radius).astype(np.int32) + 1
    y0 = np.floor(v - radius).astype(np.int32)
    y1 = np.ceil(v + radius).astype(np.int32) + 1
    np.clip(x0, 0, cam.width, out=x0)
    np.clip(x1, 0, cam.width, out=x1)
    np.clip(y0, 0, cam.height, out=y0)
    np.clip(y1, 0, cam.height, out=y1)
    onscreen = vis & (x1 > x0) & (y1 > y0)
    idx = idx[onscreen]
    if idx.size == 0:
        return None
    conic = np.stack([
        cov2d[onscreen, 1, 1] / det[onscreen],
        -cov2d[onscreen, 0, 1] / det[onscreen],
        cov2d[onscreen, 0, 0] / det[onscreen],
    ], axis=1)
    means = np.stack([u[onscreen], v[onscreen]], axis=1)
    rects = np.stack([x0[onscreen], x1[onscreen], y0[onscreen], y1[onscreen]], axis=1)
    z = z[onscreen]

    order = np.lexsort((idx, z))
    return (
        np.ascontiguousarray(means[order]),
        np.ascontiguousarray(conic[order]),
        np.ascontiguousarray(rects[order].astype(np.int32)),
        np.ascontiguousarray(model.opacities[idx[order]]),
        np.ascontiguousarray(model.colors[idx[order]]),
        np.ascontiguousarray(z[order]),
        np.ascontiguousarray(idx[order].astype(np.int64)),
    )


def _tile_lists(rects: np.ndarray, width: int, height: int):
    """Per-tile particle lists (depth order preserved within each tile)."""
    ntx = (width + TILE_SIZE - 1) // TILE_SIZE
    nty = (height + TILE_SIZE - 1) // TILE_SIZE
    tx0 = rects[:, 0] // TILE_SIZE
    tx1 = (rects[:, 1] - 1) // TILE_SIZE + 1
    ty0 = rects[:, 2] // TILE_SIZE
    ty1 = (rects[:, 3] - 1) // TILE_SIZE + 1
    tw = (tx1 - tx0).astype(np.int64)
    th = (ty1 - ty0).astype(np.int64)
    counts = tw * th
    total = int(counts.sum())
    pid = np.repeat(np.arange(len(rects), dtype=np.int64), counts)
    offs = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(counts) - counts, counts)
    kx = offs % tw[pid]
    ky = offs // tw[pid]
    tile = (ty0[pid] + ky) * ntx + (tx0[pid] + kx)
    order = np.argsort(tile, kind="stable")
    items = pid[order]
    start = np.searchsorted(tile[order], np.arange(ntx * nty + 1))
    return start.astype(np.int64), np.ascontiguousarray(items)


def render(model: SplatModel, cam: Camera, mask: VisibilityMask = MASK_ALL,
           background=(0.0, 0.0, 0.0), want_contrib: bool = False,
           cache: dict | None = None) -> RenderOutput:
    """Rasterize the masked model from `cam`.

    `cache` (an initially empty dict owned by the caller) memoizes the
    projection and tile lists across calls. Only valid while positions,
    scales, rotations, opacities, camera and mask stay unchanged; colors may
    vary freely between cached calls.
    """
    background = np.asarray(background, dtype=np.float64)
    if cache is not None and "proj" in cache:
        proj = cache["proj"]
    else:
        selected = mask.select(model)
        proj = project_particles(model, cam, selected)
        if cache is not None:
            cache["proj"] = proj
    if proj is None:
        rgb = np.broadcast_to(background, (cam.height, cam.width, 3)).copy()
        zero = np.zeros((cam.height, cam.width))
        contrib = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0)) if want_contrib else None
        return RenderOutput(rgb=rgb, depth=zero, alpha=zero.copy(), contrib=contrib)
    means, conics, rects, alphas, _, depths, orig_idx = proj
    colors = np.ascontiguousarray(model.colors[orig_idx])

    if _kernels.fast is not None:
        if cache is not None and "tiles" in cache:
            start, items = cache["tiles"]
        else:
            start, items = _tile_lists(rects, cam.width, cam.height)
            if cache is not None:
                cache["tiles"] = (start, items)
        cap = int(np.sum((rects[:, 1] - rects[:, 0]).astype(np.int64)
                         * (rects[:, 3] - rects[:, 2]))) if want_contrib else 0
        rgb, depth, alpha, contrib = _kernels.fast.composite_tiles(
            means, conics, rects, alphas, colors, depths, orig_idx,
            start, items, cam.height, cam.width, TILE_SIZE,
            background, want_contrib, cap)
    else:
        rgb, depth, alpha, contrib = cpu.composite(
            means, conics, rects, alphas, colors, depths, orig_idx,
            cam.height, cam.width, background, want_contrib)
    return RenderOutput(rgb=rgb, depth=depth, alpha=alpha, contrib=contrib)
