"""Perspective pinhole camera and view helpers.

Camera space: +x right, +y down, +z forward (into the screen), matching image
coordinates where u grows right and v grows down. Pixel centers sit at integer
coordinates, so pixel (row, col) maps to continuous (u=col, v=row).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    vertical_fov: float
    width: int
    height: int
    near: float = 1e-3
    far: float = 1e3

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise CameraError("image dimensions must be >= 1")
        if not 0 < self.near < self.far:
            raise CameraError("need 0 < near < far")
        if not 0 < self.vertical_fov < math.pi:
            raise CameraError("vertical_fov must be in (0, pi)")

    @property
    def focal(self) -> float:
        return (self.height / 2.0) / math.tan(self.vertical_fov / 2.0)

    def world_to_cam(self) -> tuple[np.ndarray, np.ndarray]:
        """Rotation (rows right/down/forward) and translation: x_cam = R (x - pos)."""
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        nf = np.linalg.norm(fwd)
        if nf < 1e-12:
            raise CameraError("camera position equals look_at")
        fwd = fwd / nf
        right = np.cross(fwd, np.asarray(self.up, dtype=np.float64))
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise CameraError("up vector is parallel to the view direction")
        right = right / nr
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd]), pos

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points (N,3) -> pixel (u,v) (N,2) and camera-space depth (N,)."""
        rot, pos = self.world_to_cam()
        cam = (np.atleast_2d(points) - pos) @ rot.T
        z = cam[:, 2]
        f = self.focal
        with np.errstate(divide="ignore", invalid="ignore"):
            u = f * cam[:, 0] / z + (self.width - 1) / 2.0
            v = f * cam[:, 1] / z + (self.height - 1) / 2.0
        return np.stack([u, v], axis=1), z

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel unit ray directions (H,W,3) in world space plus the origin."""
        rot, pos = self.world_to_cam()
        f = self.focal
        u = np.arange(self.width) - (self.width - 1) / 2.0
        v = np.arange(self.height) - (self.height - 1) / 2.0
        uu, vv = np.meshgrid(u, v)
        dirs_cam = np.stack([uu / f, vv / f, np.ones_like(uu)], axis=-1)
        dirs = dirs_cam @ rot  # rows of rot are the camera axes, so this is R^T applied
        dirs = dirs / np.linalg.norm(dirs, axis=-1, keepdims=True)
        return dirs, pos


def _stable_up(direction: np.ndarray) -> np.ndarray:
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(np.dot(direction, up))) > 0.9:
        up = np.array([1.0, 0.0, 0.0])
    return up


def framing_camera(center: np.ndarray, direction: np.ndarray, radius: float,
                   width: int, height: int, vertical_fov: float = math.radians(45.0)) -> Camera:
    """Camera looking at `center` from `direction` with the bounding sphere in frame."""
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    dist = radius / math.tan(vertical_fov / 2.0) * 1.1 + radius
    pos = center + direction * dist
    return Camera(
        position=pos,
        look_at=np.asarray(center, dtype=np.float64),
        up=_stable_up(direction),
        vertical_fov=vertical_fov,
        width=width,
        height=height,
        near=max(dist - 2.0 * radius, dist * 1e-3),
        far=dist + 2.0 * radius,
    )


def slice_camera(plane, bbox: tuple[np.ndarray, np.ndarray], width: int, height: int,
                 vertical_fov: float = math.radians(45.0)) -> Camera:
    """Camera facing a cut plane along its normal, framing the model bbox."""
    lo, hi = bbox
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(hi - lo)) / 2.0
    n = np.asarray(plane.normal, dtype=np.float64)
    # look at the bbox center projected onto the plane
    target = center - (float(np.dot(n, center)) + plane.offset) * n
    cam = framing_camera(target, n, radius, width, height, vertical_fov)
    return cam


def orbit_camera(center: np.ndarray, radius: float, azimuth: float, elevation: float,
                 width: int, height: int, vertical_fov: float = math.radians(45.0)) -> Camera:
    """Surface-view camera on a sphere around the model."""
    d = np.array([
        math.cos(elevation) * math.cos(azimuth),
        math.cos(elevation) * math.sin(azimuth),
        math.sin(elevation),
    ])
    return framing_camera(np.asarray(center, dtype=np.float64), d, radius, width, height, vertical_fov)


def ray_plane_points(cam: Camera, plane) -> tuple[np.ndarray, np.ndarray]:
    """Intersect every pixel ray with a cut plane.

    Returns (H,W,3) world points and an (H,W) validity mask (False where the
    ray is parallel to the plane or hits it behind the camera).
    """
    dirs, origin = cam.pixel_rays()
    n = np.asarray(plane.normal, dtype=np.float64)
    denom = dirs @ n
    num = -(float(np.dot(n, origin)) + plane.offset)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    valid = np.isfinite(t) & (t > 0)
    pts = origin + dirs * np.where(valid, t, 0.0)[..., None]
    return pts, valid
