"""BVH ray queries into the transmission and reflection sets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .kernels import bvh_pairs
from .scene import GaussianSet, Ray
from .splat import PairSet, evaluate_pairs, rect_corners, set_tensors

EPS_OFFSET = 1e-4
MAX_LEAF = 4


def rect_triangles(gs: GaussianSet) -> np.ndarray:
    """Each primitive's 3-sigma rectangle as two triangles, shape (N, 2, 3, 3)."""
    c = rect_corners(gs)
    return np.stack([c[:, [0, 1, 2]], c[:, [0, 2, 3]]], axis=1)


@dataclass
class GaussianBvh:
    """Flat median-split BVH.

    Internal nodes have ``left``/``right`` >= 0; leaves have ``left == -1``
    and reference ``order[start:start + count]``.
    """

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray
    n_prims: int

    @property
    def n_nodes(self) -> int:
        return self.lo.shape[0]

    def leaves(self):
        return np.nonzero(self.left < 0)[0]


def build_bvh(prims) -> GaussianBvh:
    """Median split over the longest centroid axis; leaves hold at most ``MAX_LEAF`` primitives.

    ``prims`` is a GaussianSet or a list of GaussianPrimitive.
    """
    gs = prims if isinstance(prims, GaussianSet) else GaussianSet.from_primitives(list(prims), 0)
    n = len(gs)
    if n == 0:
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, np.int64)
        return GaussianBvh(z3, z3, zi, zi, zi, zi, zi, 0)
    if np.any(gs.scale <= 0):
        raise ValueError("primitive scales must be positive")
    tri = rect_triangles(gs).reshape(n, 6, 3)
    plo = tri.min(axis=1)
    phi = tri.max(axis=1)
    pad = 1e-9 * (1.0 + np.abs(plo).max(axis=1, keepdims=True))
    plo -= pad
    phi += pad
    cent = 0.5 * (plo + phi)

    order = np.arange(n)
    lo, hi, left, right, start, count = [], [], [], [], [], []
    # (node id, begin, end) over ``order``
    stack = [(0, 0, n)]
    lo.append(None); hi.append(None); left.append(-1); right.append(-1); start.append(0); count.append(0)
    while stack:
        node, b, e = stack.pop()
        idx = order[b:e]
        lo[node] = plo[idx].min(axis=0)
        hi[node] = phi[idx].max(axis=0)
        if e - b <= MAX_LEAF:
            start[node] = b
            count[node] = e - b
            continue
        c = cent[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = (e - b) // 2
        # stable ordering keeps the build deterministic under ties
        part = np.argsort(c[:, axis], kind="stable")
        order[b:e] = idx[part]
        for side in (0, 1):
            lo.append(None); hi.append(None); left.append(-1); right.append(-1); start.append(0); count.append(0)
        lnode, rnode = len(lo) - 2, len(lo) - 1
        left[node], right[node] = lnode, rnode
        stack.append((rnode, b + mid, e))
        stack.append((lnode, b, b + mid))
    return GaussianBvh(
        np.array(lo), np.array(hi), np.array(left, np.int64), np.array(right, np.int64),
        np.array(start, np.int64), np.array(count, np.int64), order, n,
    )


def bvh_candidates(bvh: GaussianBvh, origins: np.ndarray, dirs: np.ndarray, t_min):
    """(ray, primitive) pairs whose leaf box the ray enters beyond ``t_min``.

    Breadth-first traversal vectorized over all active (ray, node) pairs.
    """
    n_rays = dirs.shape[0]
    if bvh.n_prims == 0 or n_rays == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    tmin_arr = np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n_rays,))
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    rays = np.arange(n_rays)
    nodes = np.zeros(n_rays, np.int64)
    out_r, out_p = [], []
    while rays.size:
        o = origins[rays]
        iv = inv[rays]
        with np.errstate(invalid="ignore"):
            t1 = (bvh.lo[nodes] - o) * iv
            t2 = (bvh.hi[nodes] - o) * iv
        tn = np.fmax.reduce(np.fmin(t1, t2), axis=1)
        tf = np.fmin.reduce(np.fmax(t1, t2), axis=1)
        hit = (tf >= tn) & (tf > tmin_arr[rays])
        rays, nodes = rays[hit], nodes[hit]
        leaf = bvh.left[nodes] < 0
        if leaf.any():
            lr, ln = rays[leaf], nodes[leaf]
            cnt = bvh.count[ln]
            rr = np.repeat(lr, cnt)
            off = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            out_r.append(rr)
            out_p.append(bvh.order[np.repeat(bvh.start[ln], cnt) + off])
        ir, inn = rays[~leaf], nodes[~leaf]
        rays = np.concatenate([ir, ir])
        nodes = np.concatenate([bvh.left[inn], bvh.right[inn]])
    if not out_r:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(out_r), np.concatenate(out_p)


def linear_candidates(n_prims: int, n_rays: int):
    r = np.repeat(np.arange(n_rays), n_prims)
    p = np.tile(np.arange(n_prims), n_rays)
    return r, p


@dataclass
class TraceResult:
    radiance: np.ndarray
    alpha: float
    depth: float


def find_pairs(gs: GaussianSet, bvh: GaussianBvh | None, origins, dirs, t_min, frames=None) -> PairSet:
    """Sorted hit pairs; ``bvh=None`` tests every primitive against every ray."""
    n_rays = dirs.shape[0]
    if bvh is None:
        cr, cp = linear_candidates(len(gs), n_rays)
        return PairSet.build(origins, dirs, t_min, cr, cp, gs, n_rays, frames)
    return bvh_find_pairs(gs, bvh, origins, dirs, t_min, None, frames)


def bvh_find_pairs(gs: GaussianSet, bvh: GaussianBvh, origins, dirs, t_min, active=None, frames=None) -> PairSet:
    n_rays = dirs.shape[0]
    if bvh.n_prims == 0 or n_rays == 0:
        return PairSet(np.zeros(0, np.int64), np.zeros(0, np.int64), n_rays)
    if frames is None:
        frames = gs.frames()
    tm = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n_rays,)))
    act = np.ones(n_rays, bool) if active is None else np.asarray(active, bool)
    r, p, _, g = bvh_pairs(
        bvh.lo, bvh.hi, bvh.left, bvh.right, bvh.start, bvh.count, bvh.order,
        np.ascontiguousarray(gs.mu), np.ascontiguousarray(frames), np.ascontiguousarray(gs.scale),
        np.ascontiguousarray(origins, dtype=np.float64), np.ascontiguousarray(dirs, dtype=np.float64), tm, act,
    )
    return PairSet.from_sorted(r, p, g, gs, n_rays)


def trace_pairs(gs: GaussianSet, bvh: GaussianBvh | None, origins, dirs, t_min,
                active: np.ndarray | None = None) -> PairSet:
    """Hit pairs for a ray batch; rays with ``active == False`` get none."""
    if bvh is not None:
        return bvh_find_pairs(gs, bvh, origins, dirs, t_min, active)
    if active is not None and not active.all():
        sub = np.nonzero(active)[0]
        tm = t_min if np.isscalar(t_min) else np.asarray(t_min)[sub]
        p = find_pairs(gs, bvh, origins[sub], dirs[sub], tm)
        return PairSet(sub[p.ray_idx], p.prim_idx, dirs.shape[0])
    return find_pairs(gs, bvh, origins, dirs, t_min)


def trace_t(params: dict, gs: GaussianSet, bvh: GaussianBvh | None, origins_t: torch.Tensor,
            dirs_t: torch.Tensor, t_min, degree: int, active: np.ndarray | None = None,
            pairs: PairSet | None = None):
    """Differentiable batched trace. Precomputed ``pairs`` skip the hit search."""
    if pairs is None:
        pairs = trace_pairs(gs, bvh, origins_t.detach().numpy(), dirs_t.detach().numpy(), t_min, active)
    res = evaluate_pairs(params, pairs, origins_t, dirs_t, degree)
    res.pairs = pairs
    return res


def trace_batch(bvh: GaussianBvh | None, prims: GaussianSet, origins, dirs, t_min, degree: int):
    """Numpy batched trace: (radiance (R,3), alpha (R,), depth (R,))."""
    origins = np.ascontiguousarray(np.asarray(origins, dtype=np.float64))
    dirs = np.ascontiguousarray(np.asarray(dirs, dtype=np.float64))
    with torch.no_grad():
        res = trace_t(set_tensors(prims), prims, bvh, torch.from_numpy(origins), torch.from_numpy(dirs), t_min, degree)
    return res.radiance.numpy(), res.alpha.numpy(), res.depth.numpy()


def trace(bvh: GaussianBvh | None, prims: GaussianSet, ray: Ray, degree: int = 2) -> TraceResult:
    """Composite every splat hit beyond ``ray.t_min``; SH evaluated along ``ray.dir``."""
    rad, a, d = trace_batch(bvh, prims, ray.origin[None], ray.dir[None], ray.t_min, degree)
    return TraceResult(rad[0], float(a[0]), float(d[0]))


def trace_continuation(z: float, primary_ray: Ray, bvh: GaussianBvh | None, prims: GaussianSet,
                       degree: int = 2) -> TraceResult:
    """Continue a primary ray past the interface depth ``z``.

    The returned depth is measured from the camera origin: each hit contributes
    w_i * (z + d_i), so it equals a direct trace of the same hits.
    """
    x = primary_ray.origin + z * primary_ray.dir
    res = trace(bvh, prims, Ray(x, primary_ray.dir, EPS_OFFSET), degree)
    return TraceResult(res.radiance, res.alpha, res.depth + z * res.alpha)
