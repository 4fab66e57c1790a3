"""Cut planes and slice schedules (horizontal stacks, radial fans, random sets)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np


class CutPlaneError(ValueError):
    pass


@dataclass(frozen=True)
class CutPlane:
    """Oriented plane a x + b y + c z + d = 0 with a slab half-width.

    mode 'slab' keeps particles within the slab; mode 'half' keeps the whole
    half-space below the plane (plus the slab), revealing the cut face.
    """

    normal: np.ndarray
    offset: float
    slab_half_width: float
    mode: str = "slab"
    prompt_tag: str = ""

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(n))
        if norm < 1e-12:
            raise CutPlaneError("plane normal must be non-zero")
        if abs(norm - 1.0) > 1e-9:
            object.__setattr__(self, "normal", n / norm)
            object.__setattr__(self, "offset", float(self.offset) / norm)
        else:
            object.__setattr__(self, "normal", n)
        if self.slab_half_width <= 0:
            raise CutPlaneError("slab_half_width must be > 0")
        if self.mode not in ("slab", "half"):
            raise CutPlaneError(f"unknown mode {self.mode!r}")

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.normal + self.offset

    def intersects_bbox(self, bbox) -> bool:
        lo, hi = bbox
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        d = self.signed_distance(corners)
        return bool(d.min() <= 0 <= d.max())


@dataclass(frozen=True)
class SliceSchedule:
    planes: tuple
    name: str

    def __post_init__(self):
        if not self.planes:
            raise CutPlaneError("schedule must contain at least one plane")
        object.__setattr__(self, "planes", tuple(self.planes))


def default_slab_half_width(extent: float, atom_cap_fraction: float = 1.0 / 3000.0) -> float:
    # two atomic scale caps: a covering layer without revealing deep interior
    return 2.0 * atom_cap_fraction * extent


def horizontal_stack(model, count: int, tag: str = "horizontal",
                     slab_half_width: float | None = None) -> SliceSchedule:
    """Evenly spaced horizontal planes across the bbox z-range, faces inset."""
    if count < 1:
        raise CutPlaneError("count must be >= 1")
    lo, hi = model.bbox
    if hi[2] - lo[2] <= 0:
        raise CutPlaneError("degenerate bbox: zero height")
    w = slab_half_width if slab_half_width is not None else default_slab_half_width(model.extent)
    z0, z1 = lo[2] + w, hi[2] - w
    if z1 <= z0:
        z0 = z1 = (lo[2] + hi[2]) / 2.0
    levels = np.linspace(z0, z1, count) if count > 1 else np.array([(z0 + z1) / 2.0])
    planes = [CutPlane(normal=np.array([0.0, 0.0, 1.0]), offset=-float(z), slab_half_width=w,
                       mode="slab", prompt_tag=tag) for z in levels]
    return SliceSchedule(planes=tuple(planes), name=f"horizontal_{count}")


def radial_fan(model, count: int, tag: str = "vertical",
               slab_half_width: float | None = None, axis_point: np.ndarray | None = None) -> SliceSchedule:
    """Vertical planes through the bbox center axis at angles k*pi/count.

    A full rotation of unoriented planes collapses to a half rotation, so
    `count` distinct planes span [0, pi).
    """
    if count < 1:
        raise CutPlaneError("count must be >= 1")
    lo, hi = model.bbox
    center = (lo + hi) / 2.0 if axis_point is None else np.asarray(axis_point, dtype=np.float64)
    w = slab_half_width if slab_half_width is not None else default_slab_half_width(model.extent)
    planes = []
    for k in range(count):
        theta = math.pi * k / count
        n = np.array([math.cos(theta), math.sin(theta), 0.0])
        planes.append(CutPlane(normal=n, offset=-float(np.dot(n, center)), slab_half_width=w,
                               mode="slab", prompt_tag=tag))
    return SliceSchedule(planes=tuple(planes), name=f"radial_{count}")


def random_planes(model, count: int, seed: int, tag: str = "arbitrary",
                  slab_half_width: float | None = None) -> SliceSchedule:
    """Uniform random plane normals; offsets within the middle 60% of the bbox span."""
    if count < 1:
        raise CutPlaneError("count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = model.bbox
    center = (lo + hi) / 2.0
    w = slab_half_width if slab_half_width is not None else default_slab_half_width(model.extent)
    planes = []
    for _ in range(count):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        corners = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
        proj = corners @ n
        half_span = (proj.max() - proj.min()) / 2.0
        s = float(rng.uniform(-0.6, 0.6)) * half_span
        planes.append(CutPlane(normal=n, offset=-(float(np.dot(n, center)) + s), slab_half_width=w,
                               mode="slab", prompt_tag=tag))
    return SliceSchedule(planes=tuple(planes), name=f"random_{count}_{seed}")


def schedule_to_json(schedule: SliceSchedule) -> str:
    return json.dumps({
        "name": schedule.name,
        "planes": [
            {
                "normal": [float(v) for v in p.normal],
                "offset": float(p.offset),
                "slab_half_width": float(p.slab_half_width),
                "mode": p.mode,
                "prompt_tag": p.prompt_tag,
            }
            for p in schedule.planes
        ],
    })


def schedule_from_json(text: str) -> SliceSchedule:
    doc = json.loads(text)
    planes = [
        CutPlane(normal=np.array(p["normal"], dtype=np.float64), offset=float(p["offset"]),
                 slab_half_width=float(p["slab_half_width"]), mode=p.get("mode", "slab"),
                 prompt_tag=p.get("prompt_tag", ""))
        for p in doc["planes"]
    ]
    return SliceSchedule(planes=tuple(planes), name=doc.get("name", "schedule"))
