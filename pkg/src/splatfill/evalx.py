"""Interior quality metrics: cross-slice texture consistency and, when an
analytic procedural solid is the ground truth, per-view color error on
held-out cut planes."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .camera import slice_camera
from .cutplane import CutPlane, random_planes
from .model import SplatModel
from .providers import procedural_texture
from .render import make_cut_mask, render

HIST_BINS = 8
DEFAULT_SLAB_COUNT = 120


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ConsistencyReport:
    num_views: int
    mean_pairwise_similarity: float
    per_view_oracle_error: list | None
    runtime_ms: float


def color_histogram(img: np.ndarray, foreground: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """L1-normalized joint RGB histogram over foreground pixels, flattened."""
    px = img[foreground]
    if len(px) == 0:
        return np.zeros(bins ** 3)
    q = np.clip((px * bins).astype(np.int64), 0, bins - 1)
    flat = (q[:, 0] * bins + q[:, 1]) * bins + q[:, 2]
    h = np.bincount(flat, minlength=bins ** 3).astype(np.float64)
    return h / h.sum()


def _pairwise_cosine(hists: np.ndarray) -> float:
    norms = np.linalg.norm(hists, axis=1)
    keep = norms > 0
    h = hists[keep] / norms[keep, None]
    m = len(h)
    if m < 2:
        raise EvalError("need at least two non-empty views for a consistency score")
    sims = h @ h.T
    iu = np.triu_indices(m, k=1)
    return float(sims[iu].mean())


def slice_consistency(model: SplatModel, count: int, seed: int,
                      width: int = 96, height: int = 96,
                      slab_half_width: float | None = None,
                      oracle_kind: str | None = None,
                      background=(0.0, 0.0, 0.0)) -> ConsistencyReport:
    """Texture agreement across `count` seeded random slab views.

    Each slab render is histogrammed over its foreground pixels (depth > 0)
    and the report carries the mean pairwise cosine similarity. Slabs that
    catch no particles are dropped. With `oracle_kind` set, per-view mean
    absolute error against the analytic solid is reported as well.
    """
    t0 = time.perf_counter()
    schedule = random_planes(model, count, seed, slab_half_width=slab_half_width)
    hists = []
    oracle = [] if oracle_kind else None
    for plane in schedule.planes:
        cam = slice_camera(plane, model.bbox, width, height)
        out = render(model, cam, make_cut_mask(plane), background)
        fg = out.depth > 0
        if not fg.any():
            continue
        hists.append(color_histogram(out.rgb, fg))
        if oracle_kind:
            tex = _composited_oracle(oracle_kind, plane, cam, model.bbox, out, background)
            oracle.append(float(np.abs(out.rgb[fg] - tex[fg]).mean()))
    if len(hists) < 2:
        raise EvalError(f"only {len(hists)} of {count} slabs produced foreground pixels")
    return ConsistencyReport(
        num_views=len(hists),
        mean_pairwise_similarity=_pairwise_cosine(np.array(hists)),
        per_view_oracle_error=oracle,
        runtime_ms=(time.perf_counter() - t0) * 1000.0,
    )


def _composited_oracle(kind, plane, cam, bbox, out, background):
    """Analytic target under the renderer's own coverage.

    The comparison image is alpha * texture + (1 - alpha) * background, so a
    half-covered edge pixel is judged against what a perfect coloring could
    actually produce there, not against a fully opaque texture sample.
    """
    tex = procedural_texture(kind, plane, cam, bbox, background)
    a = np.clip(out.alpha, 0.0, 1.0)[..., None]
    return a * tex + (1.0 - a) * np.asarray(background, dtype=np.float64)


def oracle_error(model: SplatModel, kind: str, planes: list[CutPlane],
                 width: int = 128, height: int = 128,
                 background=(0.0, 0.0, 0.0)) -> list[float]:
    """Foreground mean absolute color error against the analytic solid, per view."""
    if not planes:
        raise EvalError("need at least one plane")
    errors = []
    for plane in planes:
        cam = slice_camera(plane, model.bbox, width, height)
        out = render(model, cam, make_cut_mask(plane), background)
        tex = _composited_oracle(kind, plane, cam, model.bbox, out, background)
        fg = out.depth > 0
        if not fg.any():
            errors.append(float("nan"))
            continue
        errors.append(float(np.abs(out.rgb[fg] - tex[fg]).mean()))
    return errors
