"""Independent reference implementations used as test oracles.

Everything here is written the slow, obvious way on purpose: per-pixel loops,
no tiling, no culling, no early termination, and quaternion handling through
scipy instead of the package's own conversion.
"""
import math

import numpy as np
from scipy.spatial.transform import Rotation


def world_to_cam(cam):
    pos = np.asarray(cam.position, dtype=np.float64)
    fwd = np.asarray(cam.look_at, dtype=np.float64) - pos
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(cam.up, dtype=np.float64))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    return np.stack([right, down, fwd]), pos


def covariance(scale, quat_wxyz):
    r = Rotation.from_quat([quat_wxyz[1], quat_wxyz[2], quat_wxyz[3], quat_wxyz[0]]).as_matrix()
    s = np.diag(np.asarray(scale, dtype=np.float64))
    return r @ s @ s @ r.T


def composite_brute_force(model, cam, selected=None, background=(0.0, 0.0, 0.0)):
    """Direct front-to-back compositing, one pixel and one particle at a time.

    No footprint culling, no transmittance cutoff, no tiles. Depth ties are
    broken by ascending particle index like the renderer contract says.
    """
    h, w = cam.height, cam.width
    background = np.asarray(background, dtype=np.float64)
    rot, pos = world_to_cam(cam)
    f = (h / 2.0) / math.tan(cam.vertical_fov / 2.0)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0

    idx = np.arange(len(model)) if selected is None else np.flatnonzero(selected)
    entries = []
    for i in idx:
        p_cam = rot @ (model.positions[i] - pos)
        z = p_cam[2]
        if z <= cam.near or z >= cam.far:
            continue
        u = f * p_cam[0] / z + cx
        v = f * p_cam[1] / z + cy
        cov_cam = rot @ covariance(model.scales[i], model.rotations[i]) @ rot.T
        j = np.array([
            [f / z, 0.0, -f * p_cam[0] / (z * z)],
            [0.0, f / z, -f * p_cam[1] / (z * z)],
        ])
        cov2d = j @ cov_cam @ j.T + 0.3 * np.eye(2)
        entries.append((z, int(i), u, v, np.linalg.inv(cov2d),
                        float(model.opacities[i]), model.colors[i]))
    entries.sort(key=lambda e: (e[0], e[1]))

    rgb = np.zeros((h, w, 3))
    wz = np.zeros((h, w))
    alpha = np.zeros((h, w))
    trans = np.ones((h, w))
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    for z, _, u, v, inv2d, op, col in entries:
        dx = xs - u
        dy = ys - v
        q = inv2d[0, 0] * dx * dx + 2 * inv2d[0, 1] * dx * dy + inv2d[1, 1] * dy * dy
        sigma = op * np.exp(-0.5 * q)  # evaluated on the full frame, no footprint cut
        wgt = sigma * trans
        rgb += wgt[:, :, None] * col
        wz += wgt * z
        alpha += wgt
        trans = trans * (1.0 - sigma)
    rgb += trans[:, :, None] * background
    depth = np.where(alpha > 0, wz / np.maximum(alpha, 1e-300), 0.0)
    return rgb, depth, alpha


def opacity_sum_brute_force(model, points):
    """Unculled Eq.-style opacity field: plain sum over every particle."""
    points = np.atleast_2d(points)
    out = np.zeros(len(points))
    for i in range(len(model)):
        inv = np.linalg.inv(covariance(model.scales[i], model.rotations[i]))
        d = points - model.positions[i]
        q = np.einsum("ni,ij,nj->n", d, inv, d)
        out += model.opacities[i] * np.exp(-0.5 * q)
    return out


def interior_cells_brute_force(values, sigma_th, axes_required=6):
    """Per-cell six-ray scan: a low cell is enclosed when enough axis rays
    meet a high cell before leaving the grid."""
    nx, ny, nz = values.shape
    high = values >= sigma_th
    flagged = []
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if high[x, y, z]:
                    continue
                hits = 0
                hits += high[x + 1:, y, z].any()
                hits += high[:x, y, z].any()
                hits += high[x, y + 1:, z].any()
                hits += high[x, :y, z].any()
                hits += high[x, y, z + 1:].any()
                hits += high[x, y, :z].any()
                if hits >= axes_required:
                    flagged.append((x, y, z))
    return np.array(flagged, dtype=np.int64).reshape(-1, 3)


def flood_fill_exterior(values, sigma_th):
    """Boundary-connected low-opacity region (6-connectivity)."""
    low = values < sigma_th
    reach = np.zeros_like(low)
    stack = []
    nx, ny, nz = low.shape
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if (x in (0, nx - 1) or y in (0, ny - 1) or z in (0, nz - 1)) and low[x, y, z]:
                    stack.append((x, y, z))
                    reach[x, y, z] = True
    while stack:
        x, y, z = stack.pop()
        for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = x + dx, y + dy, z + dz
            if 0 <= a < nx and 0 <= b < ny and 0 <= c < nz and low[a, b, c] and not reach[a, b, c]:
                reach[a, b, c] = True
                stack.append((a, b, c))
    return reach


def mse_loops(a, b):
    total = 0.0
    h, w, c = a.shape
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                total += (a[y, x, ch] - b[y, x, ch]) ** 2
    return total / (h * w * c)


def ssim_direct(a, b, size=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    """Windowed SSIM straight from the defining formula, one window at a time."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    win = np.outer(g, g)
    win = win / win.sum()
    h, w, _ = a.shape
    vals = []
    for ch in range(3):
        for y in range(h - size + 1):
            for xx in range(w - size + 1):
                pa = a[y:y + size, xx:xx + size, ch]
                pb = b[y:y + size, xx:xx + size, ch]
                mu_a = (win * pa).sum()
                mu_b = (win * pb).sum()
                va = (win * pa * pa).sum() - mu_a ** 2
                vb = (win * pb * pb).sum() - mu_b ** 2
                cab = (win * pa * pb).sum() - mu_a * mu_b
                vals.append(((2 * mu_a * mu_b + c1) * (2 * cab + c2))
                            / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def idw_smooth_brute_force(model, resolution, neighbor_fallback=False):
    """All-pairs-in-voxel inverse-distance recoloring of untrained particles."""
    lo, hi = model.bbox
    span = np.maximum(hi - lo, 1e-12)
    ijk = np.clip(np.floor((model.positions - lo) / span * resolution).astype(int),
                  0, resolution - 1)
    delta = 1e-9 * model.extent
    colors = model.colors.copy()
    isolated = 0
    for i in range(len(model)):
        if model.trained[i]:
            continue
        src = []
        for j in range(len(model)):
            if not model.trained[j]:
                continue
            dv = np.abs(ijk[j] - ijk[i])
            same = (dv == 0).all()
            adjacent = (dv <= 1).all()
            if same or (neighbor_fallback and adjacent):
                src.append(j)
        # the fallback only kicks in when the particle's own voxel is empty
        own = [j for j in src if (ijk[j] == ijk[i]).all()]
        if own:
            src = own
        elif not neighbor_fallback:
            src = []
        if not src:
            isolated += 1
            continue
        d = np.linalg.norm(model.positions[src] - model.positions[i], axis=1)
        wgt = 1.0 / np.maximum(d, delta)
        colors[i] = np.clip((wgt[:, None] * model.colors[src]).sum(axis=0) / wgt.sum(), 0.0, 1.0)
    return colors, isolated


def histogram_loops(img, foreground, bins=8):
    h = np.zeros((bins, bins, bins))
    hh, ww = foreground.shape
    for y in range(hh):
        for x in range(ww):
            if not foreground[y, x]:
                continue
            q = [min(bins - 1, max(0, int(img[y, x, c] * bins))) for c in range(3)]
            h[q[0], q[1], q[2]] += 1
    flat = h.reshape(-1)
    s = flat.sum()
    return flat / s if s > 0 else flat
