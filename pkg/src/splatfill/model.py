"""Particle data model and OpaqueAtom constraints.

A splat model is stored structure-of-arrays: positions (N,3), scales (N,3),
rotations (N,4) unit quaternions (w,x,y,z), colors (N,3) in [0,1], opacities
(N,) in [0,1] and a per-particle boolean `trained` coverage flag. Models are
treated as immutable by every operation in this package: mutating operations
return fresh models.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class Gaussian:
    """A single particle, mostly a convenience view for tests and debugging."""

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    color: np.ndarray
    opacity: float
    trained: bool


@dataclass(frozen=True)
class OpaqueAtomConfig:
    atom_cap_fraction: float = 1.0 / 3000.0
    enforce_opacity: bool = True

    def __post_init__(self):
        if not 0.0 < self.atom_cap_fraction < 1.0:
            raise ModelError(f"atom_cap_fraction must be in (0,1), got {self.atom_cap_fraction}")


@dataclass(frozen=True)
class SplatModel:
    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray
    trained: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.positions)
        for name in ("positions", "scales", "rotations", "colors", "opacities", "trained"):
            arr = getattr(self, name)
            if len(arr) != n:
                raise ModelError(f"field {name} has length {len(arr)}, expected {n}")
        if n:
            if not np.all(self.scales > 0):
                raise ModelError("all scale components must be > 0")
            norms = np.linalg.norm(self.rotations, axis=1)
            if not np.allclose(norms, 1.0, atol=1e-6):
                raise ModelError("rotations must be unit quaternions within 1e-6")
            if self.colors.min() < 0 or self.colors.max() > 1:
                raise ModelError("color components must lie in [0,1]")
            if self.opacities.min() < 0 or self.opacities.max() > 1:
                raise ModelError("opacities must lie in [0,1]")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned (min, max) corners enclosing all particle positions."""
        if not len(self):
            raise ModelError("empty model has no bbox")
        return self.positions.min(axis=0), self.positions.max(axis=0)

    @property
    def extent(self) -> float:
        """Largest bbox side length."""
        lo, hi = self.bbox
        ext = float(np.max(hi - lo))
        if ext <= 0:
            # degenerate single-point models still need a usable size
            ext = float(max(np.max(np.abs(hi)), 1.0)) * 1e-6
        return ext

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            scale=self.scales[i].copy(),
            rotation=self.rotations[i].copy(),
            color=self.colors[i].copy(),
            opacity=float(self.opacities[i]),
            trained=bool(self.trained[i]),
        )

    def with_colors(self, colors: np.ndarray) -> "SplatModel":
        return replace(self, colors=np.asarray(colors, dtype=np.float64))

    def with_trained(self, trained: np.ndarray) -> "SplatModel":
        return replace(self, trained=np.asarray(trained, dtype=bool))


def make_model(positions, scales, rotations=None, colors=None, opacities=None,
               trained=None, metadata=None) -> SplatModel:
    """Assemble a SplatModel from arrays, filling in sane defaults."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    scales = np.asarray(scales, dtype=np.float64)
    if scales.ndim == 1:
        scales = np.repeat(scales.reshape(-1, 1), 3, axis=1)
    if rotations is None:
        rotations = np.tile(QUAT_IDENTITY, (n, 1))
    if colors is None:
        colors = np.full((n, 3), 0.5)
    if opacities is None:
        opacities = np.ones(n)
    if trained is None:
        trained = np.ones(n, dtype=bool)
    return SplatModel(
        positions=positions,
        scales=scales,
        rotations=np.asarray(rotations, dtype=np.float64).reshape(-1, 4),
        colors=np.asarray(colors, dtype=np.float64).reshape(-1, 3),
        opacities=np.asarray(opacities, dtype=np.float64).reshape(-1),
        trained=np.asarray(trained, dtype=bool).reshape(-1),
        metadata=dict(metadata or {}),
    )


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Quaternion batch (N,4) in (w,x,y,z) order to rotation matrices (N,3,3)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m[0] if single else m


def covariances(model: SplatModel, indices=None) -> np.ndarray:
    """Per-particle 3x3 covariance R S S^T R^T."""
    idx = slice(None) if indices is None else indices
    rot = quat_to_rotmat(model.rotations[idx])
    s = model.scales[idx]
    rs = rot * s[:, None, :]
    return rs @ np.swapaxes(rs, 1, 2)


def apply_opaque_atom(model: SplatModel, cfg: OpaqueAtomConfig | None = None) -> SplatModel:
    """Clamp every scale to the atomic cap and opacify all particles.

    Idempotent; never touches positions, rotations, colors or trained flags.
    """
    cfg = cfg or OpaqueAtomConfig()
    cap = cfg.atom_cap_fraction * model.extent
    scales = np.minimum(model.scales, cap)
    opacities = np.ones(len(model)) if cfg.enforce_opacity else model.opacities.copy()
    return replace(model, scales=scales, opacities=opacities)
