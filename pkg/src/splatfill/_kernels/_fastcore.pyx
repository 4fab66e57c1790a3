# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: tile compositing and opacity-grid accumulation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double SIGMA_MIN = 1e-5
cdef double T_CUT = 1e-4

NAME = "cython"


def composite_tiles(double[:, ::1] means, double[:, ::1] conics, int[:, ::1] rects,
                    double[::1] alphas, double[:, ::1] colors, double[::1] depths,
                    long long[::1] orig_idx,
                    long long[::1] tile_start, long long[::1] tile_items,
                    int height, int width, int tile_size,
                    double[::1] background, bint want_contrib, long long contrib_cap):
    """Per-pixel front-to-back compositing over precomputed per-tile particle lists.

    Particle lists are depth-sorted within each tile. Returns the same tuple
    as the numpy fallback.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=3] rgb = np.zeros((height, width, 3))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] depth = np.zeros((height, width))
    cdef cnp.ndarray[cnp.float64_t, ndim=2] wsum = np.zeros((height, width))
    cdef double[:, :, ::1] rgb_v = rgb
    cdef double[:, ::1] depth_v = depth
    cdef double[:, ::1] wsum_v = wsum

    cdef cnp.ndarray[cnp.int64_t, ndim=1] cpix
    cdef cnp.ndarray[cnp.int64_t, ndim=1] cidx
    cdef cnp.ndarray[cnp.float64_t, ndim=1] cw
    if want_contrib:
        cpix = np.empty(contrib_cap, dtype=np.int64)
        cidx = np.empty(contrib_cap, dtype=np.int64)
        cw = np.empty(contrib_cap)
    else:
        cpix = np.empty(0, dtype=np.int64)
        cidx = np.empty(0, dtype=np.int64)
        cw = np.empty(0)
    cdef long long[::1] cpix_v = cpix
    cdef long long[::1] cidx_v = cidx
    cdef double[::1] cw_v = cw
    cdef long long cursor = 0

    cdef int ntx = (width + tile_size - 1) // tile_size
    cdef int nty = (height + tile_size - 1) // tile_size
    cdef int tx, ty, px, py, x0, x1, y0, y1
    cdef long long t, s, e, it, p
    cdef double trans, dx, dy, a, b, c, power, sigma, w, acc_r, acc_g, acc_b, acc_z, acc_w

    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            s = tile_start[t]
            e = tile_start[t + 1]
            if s == e:
                # nothing overlaps this tile: background only
                for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
                    for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                        rgb_v[py, px, 0] = background[0]
                        rgb_v[py, px, 1] = background[1]
                        rgb_v[py, px, 2] = background[2]
                continue
            for py in range(ty * tile_size, min((ty + 1) * tile_size, height)):
                for px in range(tx * tile_size, min((tx + 1) * tile_size, width)):
                    trans = 1.0
                    acc_r = 0.0
                    acc_g = 0.0
                    acc_b = 0.0
                    acc_z = 0.0
                    acc_w = 0.0
                    for it in range(s, e):
                        p = tile_items[it]
                        x0 = rects[p, 0]
                        x1 = rects[p, 1]
                        y0 = rects[p, 2]
                        y1 = rects[p, 3]
                        if px < x0 or px >= x1 or py < y0 or py >= y1:
                            continue
                        dx = px - means[p, 0]
                        dy = py - means[p, 1]
                        a = conics[p, 0]
                        b = conics[p, 1]
                        c = conics[p, 2]
                        power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy
                        sigma = alphas[p] * exp(power)
                        if sigma < SIGMA_MIN:
                            continue
                        w = sigma * trans
                        acc_r += w * colors[p, 0]
                        acc_g += w * colors[p, 1]
                        acc_b += w * colors[p, 2]
                        acc_z += w * depths[p]
                        acc_w += w
                        trans *= 1.0 - sigma
                        if want_contrib and cursor < contrib_cap:
                            cpix_v[cursor] = py * width + px
                            cidx_v[cursor] = orig_idx[p]
                            cw_v[cursor] = w
                            cursor += 1
                        if trans < T_CUT:
                            break
                    rgb_v[py, px, 0] = acc_r + trans * background[0]
                    rgb_v[py, px, 1] = acc_g + trans * background[1]
                    rgb_v[py, px, 2] = acc_b + trans * background[2]
                    wsum_v[py, px] = acc_w
                    if acc_w > 0.0:
                        depth_v[py, px] = acc_z / acc_w

    if want_contrib:
        contrib = (cpix[:cursor].copy(), cidx[:cursor].copy(), cw[:cursor].copy())
    else:
        contrib = None
    return rgb, depth, wsum, contrib


def opacity_grid(double[:, ::1] positions, double[:, :, ::1] inv_covs,
                 double[:, ::1] sigmas_axis, double[::1] alphas,
                 double[::1] origin, double[::1] cell_size,
                 int nx, int ny, int nz, double cull_radius=4.5):
    """General anisotropic opacity-field accumulation at cell centers."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3] values = np.zeros((nx, ny, nz))
    cdef double[:, :, ::1] vv = values
    cdef long long p, n = positions.shape[0]
    cdef int i, j, k, i0, i1, j0, j1, k0, k1
    cdef double rx, ry, rz, dx, dy, dz, q, alpha
    cdef double m00, m01, m02, m11, m12, m22

    for p in range(n):
        alpha = alphas[p]
        rx = cull_radius * sigmas_axis[p, 0]
        ry = cull_radius * sigmas_axis[p, 1]
        rz = cull_radius * sigmas_axis[p, 2]
        i0 = <int>((positions[p, 0] - rx - origin[0]) / cell_size[0] - 0.5)
        i1 = <int>((positions[p, 0] + rx - origin[0]) / cell_size[0] - 0.5) + 2
        j0 = <int>((positions[p, 1] - ry - origin[1]) / cell_size[1] - 0.5)
        j1 = <int>((positions[p, 1] + ry - origin[1]) / cell_size[1] - 0.5) + 2
        k0 = <int>((positions[p, 2] - rz - origin[2]) / cell_size[2] - 0.5)
        k1 = <int>((positions[p, 2] + rz - origin[2]) / cell_size[2] - 0.5) + 2
        if i0 < 0: i0 = 0
        if j0 < 0: j0 = 0
        if k0 < 0: k0 = 0
        if i1 > nx: i1 = nx
        if j1 > ny: j1 = ny
        if k1 > nz: k1 = nz
        m00 = inv_covs[p, 0, 0]
        m01 = inv_covs[p, 0, 1]
        m02 = inv_covs[p, 0, 2]
        m11 = inv_covs[p, 1, 1]
        m12 = inv_covs[p, 1, 2]
        m22 = inv_covs[p, 2, 2]
        for i in range(i0, i1):
            dx = origin[0] + (i + 0.5) * cell_size[0] - positions[p, 0]
            for j in range(j0, j1):
                dy = origin[1] + (j + 0.5) * cell_size[1] - positions[p, 1]
                for k in range(k0, k1):
                    dz = origin[2] + (k + 0.5) * cell_size[2] - positions[p, 2]
                    q = m00 * dx * dx + m11 * dy * dy + m22 * dz * dz \
                        + 2.0 * (m01 * dx * dy + m02 * dx * dz + m12 * dy * dz)
                    if q > 2.0 * cull_radius * cull_radius * 3.0:
                        continue
                    vv[i, j, k] += alpha * exp(-0.5 * q)
    return values


def opacity_grid_isotropic(double[:, ::1] positions, double[::1] sigmas, double[::1] alphas,
                           double[::1] origin, double[::1] cell_size,
                           int nx, int ny, int nz, double cull_radius=4.5):
    """Fast path for isotropic particles: separable exponentials, spherical cull."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3] values = np.zeros((nx, ny, nz))
    cdef double[:, :, ::1] vv = values
    cdef long long p, n = positions.shape[0]
    cdef int i, j, k, i0, i1, j0, j1, k0, k1, klo, khi, maxdim
    cdef double r, r2, dx, dy, dz, inv2s2, alpha, ex, exy, rem, halfw

    maxdim = nx
    if ny > maxdim: maxdim = ny
    if nz > maxdim: maxdim = nz
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ezbuf = np.empty(maxdim)
    cdef double[::1] ez = ezbuf

    for p in range(n):
        alpha = alphas[p]
        r = cull_radius * sigmas[p]
        r2 = r * r
        inv2s2 = 0.5 / (sigmas[p] * sigmas[p])
        i0 = <int>((positions[p, 0] - r - origin[0]) / cell_size[0] - 0.5)
        i1 = <int>((positions[p, 0] + r - origin[0]) / cell_size[0] - 0.5) + 2
        j0 = <int>((positions[p, 1] - r - origin[1]) / cell_size[1] - 0.5)
        j1 = <int>((positions[p, 1] + r - origin[1]) / cell_size[1] - 0.5) + 2
        k0 = <int>((positions[p, 2] - r - origin[2]) / cell_size[2] - 0.5)
        k1 = <int>((positions[p, 2] + r - origin[2]) / cell_size[2] - 0.5) + 2
        if i0 < 0: i0 = 0
        if j0 < 0: j0 = 0
        if k0 < 0: k0 = 0
        if i1 > nx: i1 = nx
        if j1 > ny: j1 = ny
        if k1 > nz: k1 = nz
        for k in range(k0, k1):
            dz = origin[2] + (k + 0.5) * cell_size[2] - positions[p, 2]
            ez[k] = exp(-dz * dz * inv2s2)
        for i in range(i0, i1):
            dx = origin[0] + (i + 0.5) * cell_size[0] - positions[p, 0]
            rem = r2 - dx * dx
            if rem < 0.0:
                continue
            ex = alpha * exp(-dx * dx * inv2s2)
            for j in range(j0, j1):
                dy = origin[1] + (j + 0.5) * cell_size[1] - positions[p, 1]
                if dy * dy > rem:
                    continue
                exy = ex * exp(-dy * dy * inv2s2)
                halfw = sqrt(rem - dy * dy)
                klo = <int>((positions[p, 2] - halfw - origin[2]) / cell_size[2] - 0.5)
                khi = <int>((positions[p, 2] + halfw - origin[2]) / cell_size[2] - 0.5) + 2
                if klo < k0: klo = k0
                if khi > k1: khi = k1
                for k in range(klo, khi):
                    vv[i, j, k] += exy * ez[k]
    return values
