"""Pure-numpy kernels: compositing and opacity-grid accumulation.

Fallback for environments where the compiled extension is unavailable. Same
semantics as the Cython kernels: per-pixel front-to-back compositing with a
per-influence floor SIGMA_MIN and a transmittance cutoff T_CUT, after which a
pixel is frozen and its remaining transmittance multiplies the background.
"""
from __future__ import annotations

import numpy as np

SIGMA_MIN = 1e-5
T_CUT = 1e-4

NAME = "numpy"


def composite(means, conics, rects, alphas, colors, depths, orig_idx,
              height, width, background, want_contrib):
    """Composite depth-sorted projected particles.

    Returns rgb (H,W,3), depth (H,W), alpha (H,W) and, when requested,
    contrib triplets (pixel_flat_index, particle_index, blend_weight).
    """
    rgb = np.zeros((height, width, 3))
    wz = np.zeros((height, width))
    wsum = np.zeros((height, width))
    trans = np.ones((height, width))
    cpix, cidx, cw = [], [], []

    for p in range(len(means)):
        x0, x1, y0, y1 = rects[p]
        if x1 <= x0 or y1 <= y0:
            continue
        tr = trans[y0:y1, x0:x1]
        active = tr >= T_CUT
        if not active.any():
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        dx = xs - means[p, 0]
        dy = ys - means[p, 1]
        a, b, c = conics[p]
        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
        sigma = alphas[p] * np.exp(power)
        sigma = np.where(sigma >= SIGMA_MIN, sigma, 0.0)
        w = np.where(active, sigma * tr, 0.0)
        if not w.any():
            continue
        rgb[y0:y1, x0:x1] += w[:, :, None] * colors[p]
        wz[y0:y1, x0:x1] += w * depths[p]
        wsum[y0:y1, x0:x1] += w
        trans[y0:y1, x0:x1] = np.where(active & (sigma > 0), tr * (1.0 - sigma), tr)
        if want_contrib:
            my, mx = np.nonzero(w > 0)
            cpix.append((ys[my, mx] * width + xs[my, mx]).astype(np.int64))
            cidx.append(np.full(len(my), orig_idx[p], dtype=np.int64))
            cw.append(w[my, mx])

    rgb += trans[:, :, None] * np.asarray(background)
    depth = np.where(wsum > 0, wz / np.maximum(wsum, 1e-300), 0.0)
    if want_contrib:
        if cpix:
            contrib = (np.concatenate(cpix), np.concatenate(cidx), np.concatenate(cw))
        else:
            contrib = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))
    else:
        contrib = None
    return rgb, depth, wsum, contrib


def opacity_grid(positions, inv_covs, sigmas_axis, alphas, origin, cell_size, resolution, cull_radius=4.5):
    """Accumulate the summed Gaussian opacity field at cell centers.

    `sigmas_axis` are per-axis standard deviations (sqrt of covariance
    diagonals) used for box culling at cull_radius sigmas.
    """
    nx, ny, nz = resolution
    values = np.zeros((nx, ny, nz))
    centers = [origin[d] + (np.arange(resolution[d]) + 0.5) * cell_size[d] for d in range(3)]
    for p in range(len(positions)):
        lo_i, hi_i = [], []
        for d in range(3):
            r = cull_radius * sigmas_axis[p, d]
            lo = int(np.searchsorted(centers[d], positions[p, d] - r))
            hi = int(np.searchsorted(centers[d], positions[p, d] + r))
            lo_i.append(lo)
            hi_i.append(hi)
        if any(hi_i[d] <= lo_i[d] for d in range(3)):
            continue
        dx = centers[0][lo_i[0]:hi_i[0]] - positions[p, 0]
        dy = centers[1][lo_i[1]:hi_i[1]] - positions[p, 1]
        dz = centers[2][lo_i[2]:hi_i[2]] - positions[p, 2]
        m = inv_covs[p]
        q = (
            m[0, 0] * dx[:, None, None] ** 2
            + m[1, 1] * dy[None, :, None] ** 2
            + m[2, 2] * dz[None, None, :] ** 2
            + 2 * m[0, 1] * dx[:, None, None] * dy[None, :, None]
            + 2 * m[0, 2] * dx[:, None, None] * dz[None, None, :]
            + 2 * m[1, 2] * dy[None, :, None] * dz[None, None, :]
        )
        values[lo_i[0]:hi_i[0], lo_i[1]:hi_i[1], lo_i[2]:hi_i[2]] += alphas[p] * np.exp(-0.5 * q)
    return values
