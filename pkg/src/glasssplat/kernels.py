"""Compiled pair-finding loops (no gradients flow through these)."""
from __future__ import annotations

import numpy as np
from numba import njit

G_CUTOFF = float(np.exp(-4.5))
EPS_PARALLEL = 1e-8


@njit(cache=True)
def _hit_depth(ox, oy, oz, dx, dy, dz, tmin, mu, fr, scale, p):
    """(ray parameter, Gaussian value) of a true hit on primitive ``p``; the parameter is nan on a miss."""
    nx, ny, nz = fr[p, 0, 2], fr[p, 1, 2], fr[p, 2, 2]
    den = dx * nx + dy * ny + dz * nz
    if abs(den) <= EPS_PARALLEL:
        return np.nan, 0.0
    mx, my, mz = mu[p, 0], mu[p, 1], mu[p, 2]
    t = ((mx - ox) * nx + (my - oy) * ny + (mz - oz) * nz) / den
    if not t > tmin:
        return np.nan, 0.0
    rx = ox + t * dx - mx
    ry = oy + t * dy - my
    rz = oz + t * dz - mz
    u = (rx * fr[p, 0, 0] + ry * fr[p, 1, 0] + rz * fr[p, 2, 0]) / scale[p, 0]
    v = (rx * fr[p, 0, 1] + ry * fr[p, 1, 1] + rz * fr[p, 2, 1]) / scale[p, 1]
    g = np.exp(-0.5 * (u * u + v * v))
    if g < G_CUTOFF:
        return np.nan, 0.0
    return t, g


@njit(cache=True)
def filter_pairs(origins, dirs, tmin, ray_idx, prim_idx, mu, fr, scale):
    """Keep mask, depth and Gaussian value for candidate (ray, primitive) pairs."""
    n = ray_idx.shape[0]
    keep = np.zeros(n, np.bool_)
    depth = np.zeros(n)
    gval = np.zeros(n)
    for i in range(n):
        r = ray_idx[i]
        t, g = _hit_depth(origins[r, 0], origins[r, 1], origins[r, 2], dirs[r, 0], dirs[r, 1], dirs[r, 2],
                       tmin[r], mu, fr, scale, prim_idx[i])
        if t == t:
            keep[i] = True
            depth[i] = t
            gval[i] = g
    return keep, depth, gval


@njit(cache=True)
def _sort_segment(depth, prim, gval, b, e):
    # insertion sort on (depth, prim); segments are short
    for i in range(b + 1, e):
        d, p, g = depth[i], prim[i], gval[i]
        j = i - 1
        while j >= b and (depth[j] > d or (depth[j] == d and prim[j] > p)):
            depth[j + 1] = depth[j]
            prim[j + 1] = prim[j]
            gval[j + 1] = gval[j]
            j -= 1
        depth[j + 1] = d
        prim[j + 1] = p
        gval[j + 1] = g


@njit(cache=True)
def _ray_box(ox, oy, oz, ix, iy, iz, lo, hi, node, tmin):
    tn = -np.inf
    tf = np.inf
    for a, o, iv in ((0, ox, ix), (1, oy, iy), (2, oz, iz)):
        t1 = (lo[node, a] - o) * iv
        t2 = (hi[node, a] - o) * iv
        # nan (0 * inf) is ignored like fmin/fmax do
        if t1 == t1 and t2 == t2:
            tn = max(tn, min(t1, t2))
            tf = min(tf, max(t1, t2))
        elif t1 == t1:
            tn = max(tn, t1)
            tf = min(tf, t1)
        elif t2 == t2:
            tn = max(tn, t2)
            tf = min(tf, t2)
    return tf >= tn and tf > tmin


@njit(cache=True)
def bvh_pairs(lo, hi, left, right, start, count, order, mu, fr, scale, origins, dirs, tmin, active):
    """Sorted true-hit pairs of every active ray against a flat BVH.

    Returns (ray_idx, prim_idx, depth, gauss value); pairs are grouped by ray
    and ordered by (depth, primitive index) within a ray.
    """
    n_rays = dirs.shape[0]
    cap = 1024
    out_r = np.empty(cap, np.int64)
    out_p = np.empty(cap, np.int64)
    out_d = np.empty(cap)
    out_g = np.empty(cap)
    m = 0
    stack = np.empty(128, np.int64)
    for r in range(n_rays):
        if not active[r]:
            continue
        ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else (np.inf if not np.signbit(dx) else -np.inf)
        iy = 1.0 / dy if dy != 0.0 else (np.inf if not np.signbit(dy) else -np.inf)
        iz = 1.0 / dz if dz != 0.0 else (np.inf if not np.signbit(dz) else -np.inf)
        tm = tmin[r]
        b = m
        sp = 0
        stack[sp] = 0
        sp += 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if not _ray_box(ox, oy, oz, ix, iy, iz, lo, hi, node, tm):
                continue
            if left[node] < 0:
                for k in range(start[node], start[node] + count[node]):
                    p = order[k]
                    t, g = _hit_depth(ox, oy, oz, dx, dy, dz, tm, mu, fr, scale, p)
                    if t != t:
                        continue
                    if m == cap:
                        cap *= 2
                        nr = np.empty(cap, np.int64)
                        npp = np.empty(cap, np.int64)
                        nd = np.empty(cap)
                        ng = np.empty(cap)
                        nr[:m] = out_r[:m]
                        npp[:m] = out_p[:m]
                        nd[:m] = out_d[:m]
                        ng[:m] = out_g[:m]
                        out_r, out_p, out_d, out_g = nr, npp, nd, ng
                    out_r[m] = r
                    out_p[m] = p
                    out_d[m] = t
                    out_g[m] = g
                    m += 1
            else:
                if sp + 2 > stack.shape[0]:
                    ns = np.empty(stack.shape[0] * 2, np.int64)
                    ns[:sp] = stack[:sp]
                    stack = ns
                stack[sp] = right[node]
                stack[sp + 1] = left[node]
                sp += 2
        _sort_segment(out_d, out_p, out_g, b, m)
    return out_r[:m].copy(), out_p[:m].copy(), out_d[:m].copy(), out_g[:m].copy()


@njit(cache=True)
def early_stop_mask(ray_idx, alpha, t_stop):
    """Pairs sorted by ray then depth; a pair survives while the transmittance before it is >= t_stop."""
    n = ray_idx.shape[0]
    keep = np.zeros(n, np.bool_)
    T = 1.0
    for i in range(n):
        if i == 0 or ray_idx[i] != ray_idx[i - 1]:
            T = 1.0
        if T >= t_stop:
            keep[i] = True
        T *= 1.0 - alpha[i]
    return keep
