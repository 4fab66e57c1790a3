"""Color optimization against reference cross-section views plus surface
preservation views, with progressive reference refinement and periodic voxel
smoothing. Geometry, opacity and ordering stay frozen throughout: the forward
pass is linear in particle colors through the blend weights, so the backward
pass is exact."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ply_io
from .camera import Camera, orbit_camera, slice_camera
from .cutplane import SliceSchedule
from .losses import recon_loss, recon_loss_grad
from .model import OpaqueAtomConfig, SplatModel, apply_opaque_atom
from .providers import (INIT_STEPS_DEFAULT, ProviderError, ReferenceRequest,
                        ReferenceView)
from .render import MASK_ALL, RenderOutput, VisibilityMask, make_cut_mask, render
from .smooth import SmoothConfig, smooth

log = logging.getLogger(__name__)

SURFACE_POOL_SIZE = 60
CHECKPOINT_INTERVAL = 25


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.8
    learning_rate: float = 0.05
    iterations_max: int = 200
    surface_views_per_iter: int = 20
    refine_steps_per_iter: int = 4
    smooth_interval: int = 35
    convergence_epsilon: float = 0.005
    # pull each particle toward the reference color under its own footprint;
    # resolves the color null space of heavily overlapping blends
    anchor_weight: float = 1.0
    # opaque dots occlude everything behind them, so dust hidden behind the
    # front monolayer of a slab sees only junk residual weight. Particles
    # whose total slice blend weight stays below this keep their colors and
    # stay untrained; smoothing recolors them from visible neighbors.
    min_visibility: float = 0.1
    rng_seed: int = 0
    optimizer: str = "precond"  # precond | sgd
    render_width: int = 128
    render_height: int = 128
    background: tuple[float, float, float] = (0.0, 0.0, 0.0)
    smooth_cfg: SmoothConfig = field(default_factory=SmoothConfig)
    atom_cfg: OpaqueAtomConfig = field(default_factory=OpaqueAtomConfig)

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise TrainError("alpha must be in [0,1]")
        if self.iterations_max < 0:
            raise TrainError("iterations_max must be >= 0")
        if self.smooth_interval < 1:
            raise TrainError("smooth_interval must be >= 1")
        if self.optimizer not in ("precond", "sgd"):
            raise TrainError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainState:
    model: SplatModel
    references: list[ReferenceView]
    surface_views: list[tuple[Camera, np.ndarray]]
    iteration: int = 0
    per_view_loss: dict = field(default_factory=dict)


def color_gradients(model: SplatModel, out: RenderOutput, reference: np.ndarray,
                    alpha: float) -> np.ndarray:
    """Gradient of recon_loss(out.rgb, reference) w.r.t. every particle color.

    Uses d pixel / d color_i = w_i from the contrib list; particles with zero
    blend weight everywhere get exactly zero gradient.
    """
    if out.contrib is None:
        raise TrainError("render output lacks contrib lists; render with want_contrib=True")
    dli = recon_loss_grad(out.rgb, reference, alpha).reshape(-1, 3)
    pix, idx, w = out.contrib
    grads = np.zeros((len(model), 3))
    np.add.at(grads, idx, w[:, None] * dli[pix])
    return grads


def _grad_diag(model_len: int, contrib, scale: float) -> np.ndarray:
    """Diagonal curvature of the pixel-wise quadratic term: sum_px w^2 * scale."""
    pix, idx, w = contrib
    h = np.zeros(model_len)
    np.add.at(h, idx, w * w * scale)
    return h


def _surface_pool(model: SplatModel, cfg: TrainConfig, rng) -> list[Camera]:
    lo, hi = model.bbox
    center = (lo + hi) / 2.0
    radius = float(np.linalg.norm(hi - lo)) / 2.0
    cams = []
    for _ in range(SURFACE_POOL_SIZE):
        az = rng.uniform(0.0, 2 * np.pi)
        el = rng.uniform(-0.45 * np.pi, 0.45 * np.pi)
        cams.append(orbit_camera(center, radius, az, el, cfg.render_width, cfg.render_height))
    return cams


def _write_checkpoint(model: SplatModel, path: Path, iteration: int):
    path.mkdir(parents=True, exist_ok=True)
    ply = path / f"checkpoint_{iteration:05d}.ply"
    ply.write_bytes(ply_io.export_ply(model))
    (path / f"checkpoint_{iteration:05d}.meta.json").write_text(ply_io.export_meta(model))


def train(model: SplatModel, schedule: SliceSchedule, provider, cfg: TrainConfig,
          checkpoint_dir: str | Path | None = None,
          log_path: str | Path | None = None) -> SplatModel:
    """Two-stage optimization: per-plane reference generation, then the joint
    refinement loop (gradient steps, trained-flag marking, periodic smoothing,
    reference refreshes) until all per-view losses drop below the epsilon or
    the iteration budget runs out."""
    rng = np.random.default_rng(cfg.rng_seed)
    model = apply_opaque_atom(model, cfg.atom_cfg)
    frozen = (model.positions.copy(), model.scales.copy(), model.rotations.copy(),
              model.opacities.copy())
    surface_locked = model.trained.copy()
    bbox = model.bbox

    log_file = open(log_path, "w") if log_path else None

    def emit(entry):
        if log_file:
            log_file.write(json.dumps(entry) + "\n")
            log_file.flush()

    # stage 1: render each slice view and obtain its initial reference
    views: list[tuple[str, Camera, VisibilityMask]] = []
    references: list[ReferenceView] = []
    try:
        for vi, plane in enumerate(schedule.planes):
            view_id = f"slice_{vi:03d}"
            cam = slice_camera(plane, bbox, cfg.render_width, cfg.render_height)
            mask = make_cut_mask(plane)
            if hasattr(provider, "register_view"):
                provider.register_view(view_id, cam, plane)
            out = render(model, cam, mask, cfg.background)
            req = ReferenceRequest(view_id=view_id, rgb=out.rgb, depth=out.depth,
                                   prompt_tag=plane.prompt_tag, steps=INIT_STEPS_DEFAULT,
                                   kind="init", alpha=out.alpha)
            ref_img = provider.provide(req)
            views.append((view_id, cam, mask))
            references.append(ReferenceView(view_id=view_id, camera=cam, plane=plane,
                                            image=ref_img, version=1))
    except ProviderError:
        if checkpoint_dir:
            _write_checkpoint(model, Path(checkpoint_dir), 0)
        raise

    # surface views are rendered once, from the input model, before training
    pool = _surface_pool(model, cfg, rng)
    surf_caches = [dict() for _ in pool]
    surface_views = [(cam, render(model, cam, MASK_ALL, cfg.background, cache=c).rgb)
                     for cam, c in zip(pool, surf_caches)]

    state = TrainState(model=model, references=references, surface_views=surface_views)
    n = len(model)
    trained_flags = model.trained.copy()
    colors = model.colors.copy()
    # geometry is frozen, so per-view projections are valid for the whole run
    slice_caches = [dict() for _ in views]

    for it in range(1, cfg.iterations_max + 1):
        t0 = time.perf_counter()
        grads = np.zeros((n, 3))
        diag = np.zeros(n)
        wsum = np.zeros(n)
        per_view_loss = {}

        work = replace(model, colors=colors, trained=trained_flags)
        # slice views first, then surface views: deterministic ordered reduction
        for ((view_id, cam, mask), ref, vcache) in zip(views, references, slice_caches):
            out = render(work, cam, mask, cfg.background, want_contrib=True, cache=vcache)
            loss = recon_loss(out.rgb, ref.image, cfg.alpha)
            if not np.isfinite(loss):
                raise TrainError(f"loss diverged (NaN) at iteration {it}, view {view_id}")
            per_view_loss[view_id] = float(loss)
            grads += color_gradients(work, out, ref.image, cfg.alpha)
            diag += _grad_diag(n, out.contrib, 2.0 * max(cfg.alpha, 0.1) / out.rgb.size)
            if cfg.anchor_weight > 0.0:
                pix, pidx, w = out.contrib
                resid = work.colors[pidx] - ref.image.reshape(-1, 3)[pix]
                s = 2.0 * cfg.anchor_weight / out.rgb.size
                np.add.at(grads, pidx, (s * w)[:, None] * resid)
                np.add.at(diag, pidx, s * w)
            np.add.at(wsum, out.contrib[1], out.contrib[2])

        visible = wsum >= cfg.min_visibility
        trained_flags[visible] = True
        grads[~visible & ~surface_locked] = 0.0
        diag[~visible & ~surface_locked] = 0.0

        # gradient routing: interior particles learn from slice views only,
        # surface-locked particles from surface views only. Interior dust is
        # visible through gaps in the atomized shell, and letting surface
        # views pull on it would fight the slice references.
        sgrads = np.zeros((n, 3))
        sdiag = np.zeros(n)
        chosen = rng.choice(len(surface_views), size=min(cfg.surface_views_per_iter,
                                                         len(surface_views)), replace=False)
        for ci in sorted(chosen):
            cam, ref_img = surface_views[ci]
            out = render(work, cam, MASK_ALL, cfg.background, want_contrib=True,
                         cache=surf_caches[ci])
            sgrads += color_gradients(work, out, ref_img, cfg.alpha)
            sdiag += _grad_diag(n, out.contrib, 2.0 * max(cfg.alpha, 0.1) / out.rgb.size)
        grads[surface_locked] = sgrads[surface_locked]
        diag[surface_locked] = sdiag[surface_locked]

        if cfg.optimizer == "precond":
            step = grads / np.maximum(diag, 1e-300)[:, None]
            step[diag <= 0] = 0.0
        else:
            step = grads
        colors = np.clip(colors - cfg.learning_rate * step, 0.0, 1.0)

        smoothed = False
        if it % cfg.smooth_interval == 0:
            work = replace(model, colors=colors, trained=trained_flags)
            sm, _ = smooth(work, cfg.smooth_cfg)
            colors = sm.colors.copy()
            smoothed = True

        # OpaqueAtom re-assertion; geometry is frozen so this is the identity
        assert np.all(frozen[3] == 1.0)
        cap = cfg.atom_cfg.atom_cap_fraction * model.extent
        assert float(frozen[1].max()) <= cap * (1 + 1e-12)

        # refresh references from the current model state
        work = replace(model, colors=colors, trained=trained_flags)
        try:
            for ((view_id, cam, mask), ref, vcache) in zip(views, references, slice_caches):
                out = render(work, cam, mask, cfg.background, cache=vcache)
                req = ReferenceRequest(view_id=view_id, rgb=out.rgb, depth=out.depth,
                                       prompt_tag=ref.plane.prompt_tag,
                                       steps=cfg.refine_steps_per_iter, kind="refine",
                                       alpha=out.alpha)
                ref.image = provider.provide(req)
                ref.version += 1
        except ProviderError:
            if checkpoint_dir:
                _write_checkpoint(work, Path(checkpoint_dir), it)
            raise

        state.iteration = it
        state.per_view_loss = per_view_loss
        emit({"iteration": it, "per_view_loss": per_view_loss,
              "mean_loss": float(np.mean(list(per_view_loss.values()))),
              "smoothed": smoothed,
              "wall_ms": (time.perf_counter() - t0) * 1000.0})

        if checkpoint_dir and it % CHECKPOINT_INTERVAL == 0:
            _write_checkpoint(work, Path(checkpoint_dir), it)

        if per_view_loss and max(per_view_loss.values()) < cfg.convergence_epsilon:
            log.info("converged after %d iterations (max per-view loss %.5f)",
                     it, max(per_view_loss.values()))
            break

    if log_file:
        log_file.close()

    out_model = replace(model, colors=colors, trained=trained_flags)
    # geometry/opacity frozen by construction; keep the guarantee loud
    assert out_model.positions is frozen[0] or np.array_equal(out_model.positions, frozen[0])
    return out_model
