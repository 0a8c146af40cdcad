"""Perspective-correct splatting of the interface set into a G-buffer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .scene import Camera, DecomposedScene, GaussianPrimitive, GaussianSet, Ray, eval_sh, quat_to_matrix
from .splat import (
    ALPHA_CAP, EPS_PARALLEL, G_CUTOFF, T_STOP, PairSet, evaluate_pairs, rect_corners, set_tensors,
)


@dataclass
class SplatHit:
    prim_index: int
    depth: float
    gauss_val: float
    alpha: float


def ray_splat_intersect(ray: Ray, g: GaussianPrimitive, prim_index: int = 0) -> SplatHit | None:
    """Intersect a ray with a primitive's tangent plane and evaluate the Gaussian there."""
    m = quat_to_matrix(g.rot)
    tu, tv, n = m[:, 0], m[:, 1], m[:, 2]
    denom = float(ray.dir @ n)
    if abs(denom) <= EPS_PARALLEL:
        return None
    depth = float((g.mu - ray.origin) @ n) / denom
    if not depth > ray.t_min:
        return None
    rel = ray.origin + depth * ray.dir - g.mu
    u = float(rel @ tu) / g.scale[0]
    v = float(rel @ tv) / g.scale[1]
    gval = float(np.exp(-0.5 * (u * u + v * v)))
    if gval < G_CUTOFF:
        return None
    alpha = min(g.opacity * gval, ALPHA_CAP)
    return SplatHit(prim_index, depth, gval, alpha)


@dataclass
class PixelComposite:
    l_intr: np.ndarray
    z: float
    n: np.ndarray
    t: float
    s: float
    acc_alpha: float
    transmittance: float


def composite_pixel(hits: list[SplatHit], scene: DecomposedScene, view_dir, gset: GaussianSet | None = None):
    """Front-to-back composite of depth-sorted hits of one pixel.

    ``gset`` defaults to the interface set; t and s are composited only when
    the set carries interface attributes.
    """
    gs = scene.intr if gset is None else gset
    view_dir = np.asarray(view_dir, dtype=np.float64)
    l = np.zeros(3)
    nrm = np.zeros(3)
    z = t = s = acc = 0.0
    trans = 1.0
    for h in hits:
        if trans < T_STOP:
            break
        w = trans * h.alpha
        i = h.prim_index
        c = eval_sh(gs.sh[i], view_dir, scene.sh_degree)
        ni = quat_to_matrix(gs.rot[i])[:, 2]
        if ni @ view_dir > 0:
            ni = -ni
        l += w * c
        z += w * h.depth
        nrm += w * ni
        if gs.is_interface:
            t += w / (1.0 + np.exp(-gs.trans_logit[i]))
            s += w / (1.0 + np.exp(-gs.spec_logit[i]))
        acc += w
        trans *= 1.0 - h.alpha
    norm = np.linalg.norm(nrm)
    nrm = nrm / norm if acc > 0 and norm > 0 else np.zeros(3)
    return PixelComposite(l, z, nrm, t, s, acc, trans)


@dataclass
class GBuffer:
    """Per-pixel interface rasters, each shaped (H, W[, C])."""

    z: np.ndarray
    n: np.ndarray
    t: np.ndarray
    s: np.ndarray
    l_intr: np.ndarray
    acc_alpha: np.ndarray
    transmittance: np.ndarray


def screen_candidates(gs: GaussianSet, cam: Camera):
    """(pixel, primitive) candidate pairs from projected 3-sigma rectangles.

    A planar convex quad in front of the camera projects inside the hull of its
    projected corners, so the corner bounding box is conservative. Quads that
    reach behind the camera plane are tested against every pixel.
    """
    n = len(gs)
    if n == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    corners = rect_corners(gs)
    px, zc = cam.project(corners)
    W, H = cam.width, cam.height
    front = (zc > 1e-9).all(axis=1)
    behind = (zc <= 1e-9).all(axis=1)
    x0 = np.zeros(n, np.int64)
    x1 = np.full(n, W - 1, np.int64)
    y0 = np.zeros(n, np.int64)
    y1 = np.full(n, H - 1, np.int64)
    if front.any():
        lo = px[front].min(axis=1)
        hi = px[front].max(axis=1)
        x0[front] = np.clip(np.floor(lo[:, 0] - 0.5), 0, W)
        x1[front] = np.clip(np.ceil(hi[:, 0] - 0.5), -1, W - 1)
        y0[front] = np.clip(np.floor(lo[:, 1] - 0.5), 0, H)
        y1[front] = np.clip(np.ceil(hi[:, 1] - 0.5), -1, H - 1)
    nx = np.where(behind, 0, np.maximum(x1 - x0 + 1, 0))
    ny = np.where(behind, 0, np.maximum(y1 - y0 + 1, 0))
    cnt = nx * ny
    total = int(cnt.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    prim = np.repeat(np.arange(n), cnt)
    local = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    nxr = nx[prim]
    xs = x0[prim] + local % nxr
    ys = y0[prim] + local // nxr
    return ys * W + xs, prim


def interface_extra(params):
    """Per-pair features composited into the G-buffer: oriented normal, t, s."""

    def fn(pi, fr, d):
        n = fr[..., 2]
        if n.shape[0]:
            sign = torch.where((n * d).sum(-1, keepdim=True).detach() > 0, -1.0, 1.0).to(n.dtype)
            n = n * sign
        feats = [n]
        if "trans_logit" in params:
            feats += [torch.sigmoid(params["trans_logit"][pi])[:, None], torch.sigmoid(params["spec_logit"][pi])[:, None]]
        else:
            feats += [n.new_zeros(n.shape[0], 2)]
        return torch.cat(feats, dim=1)

    return fn


def rasterize_t(params: dict, gs: GaussianSet, cam: Camera, degree: int, origins_t=None, dirs_t=None,
                pairs: PairSet | None = None):
    """Differentiable G-buffer as flat per-pixel tensors.

    ``gs`` supplies the detached geometry used for pair finding; ``params`` the
    (possibly grad-tracking) tensors evaluated on those pairs. Passing
    ``pairs`` reuses an earlier hit structure.
    """
    dirs = cam.pixel_dirs().reshape(-1, 3)
    n_pix = dirs.shape[0]
    origins = np.broadcast_to(cam.position, dirs.shape)
    if pairs is None:
        cr, cp = screen_candidates(gs, cam)
        pairs = PairSet.build(origins, dirs, 0.0, cr, cp, gs, n_pix)
    if origins_t is None:
        origins_t = torch.tensor(np.ascontiguousarray(origins))
        dirs_t = torch.tensor(dirs)
    res = evaluate_pairs(params, pairs, origins_t, dirs_t, degree, extra_fn=interface_extra(params))
    ex = res.extra
    n_raw = ex[:, :3]
    norm = n_raw.norm(dim=-1, keepdim=True)
    covered = (res.alpha.detach() > 0) & (norm.detach()[:, 0] > 0)
    n = torch.where(covered[:, None], n_raw / torch.where(covered[:, None], norm, torch.ones_like(norm)),
                    torch.zeros_like(n_raw))
    return {
        "l_intr": res.radiance,
        "z": res.depth,
        "n": n,
        "t": ex[:, 3],
        "s": ex[:, 4],
        "acc_alpha": res.alpha,
        "transmittance": res.transmittance,
        "prim_hits": res.prim_hits,
        "n_pairs": res.n_pairs,
        "pairs": pairs,
    }


def rasterize_set(gs: GaussianSet, cam: Camera, degree: int) -> GBuffer:
    """Rasterize any primitive set (debug renders use the non-interface sets)."""
    with torch.no_grad():
        out = rasterize_t(set_tensors(gs), gs, cam, degree)
    H, W = cam.height, cam.width

    def img(key, c=None):
        a = out[key].numpy()
        return a.reshape(H, W) if c is None else a.reshape(H, W, c)

    return GBuffer(
        z=img("z"), n=img("n", 3), t=img("t"), s=img("s"),
        l_intr=img("l_intr", 3), acc_alpha=img("acc_alpha"), transmittance=img("transmittance"),
    )


def rasterize_interface(scene: DecomposedScene, cam: Camera) -> GBuffer:
    return rasterize_set(scene.intr, cam, scene.sh_degree)
