"""Batched ray/splat evaluation and front-to-back compositing.

Both the rasterizer and the BVH tracer reduce to the same two steps: find
(ray, primitive) pairs that actually hit (numpy, no gradients) and then
evaluate and composite those pairs differentiably (torch, float64). Discrete
decisions (hit/miss, sort order, early termination) are taken on detached
values; gradients flow through the Gaussian evaluation only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .kernels import early_stop_mask, filter_pairs
from .scene import SH_C0, SH_C1, SH_C2, SH_C3, GaussianSet, sh_coeff_count

ALPHA_CAP = 0.999
T_STOP = 1e-4
G_CUTOFF = float(np.exp(-4.5))
EPS_PARALLEL = 1e-8
SIGMA_EXTENT = 3.0

DTYPE = torch.float64


def set_tensors(gs: GaussianSet, requires_grad: bool = False) -> dict[str, torch.Tensor]:
    """Torch view of a set's raw arrays (``scale`` as actual scale)."""
    out = {}
    for k, v in gs.arrays().items():
        t = torch.tensor(v, dtype=DTYPE)
        if requires_grad:
            t.requires_grad_(True)
        out[k] = t
    return out


def quat_frames_t(rot: torch.Tensor) -> torch.Tensor:
    q = rot / rot.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    rows = [
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ]
    return torch.stack(rows, dim=-1).reshape(rot.shape[:-1] + (3, 3))


def sh_basis_t(dirs: torch.Tensor, degree: int) -> torch.Tensor:
    x, y, z = dirs.unbind(-1)
    out = [torch.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z, SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            SH_C3[0] * y * (3 * xx - yy), SH_C3[1] * x * y * z, SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy), SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy), SH_C3[6] * x * (xx - 3 * yy),
        ]
    return torch.stack(out, dim=-1)


def eval_sh_t(sh: torch.Tensor, dirs: torch.Tensor, degree: int) -> torch.Tensor:
    """sh: (P, K, 3), dirs: (P, 3) -> clamped radiance (P, 3)."""
    basis = sh_basis_t(dirs, degree)
    rgb = (basis.unsqueeze(-1) * sh[:, : sh_coeff_count(degree)]).sum(1) + 0.5
    return rgb.clamp_min(0.0)


# ---------------------------------------------------------------- pair finding

def rect_corners(gs: GaussianSet) -> np.ndarray:
    """Corners of each primitive's 3-sigma rectangle, shape (N, 4, 3)."""
    fr = gs.frames()
    a = SIGMA_EXTENT * gs.scale[:, 0, None] * fr[:, :, 0]
    b = SIGMA_EXTENT * gs.scale[:, 1, None] * fr[:, :, 1]
    mu = gs.mu
    return np.stack([mu - a - b, mu + a - b, mu + a + b, mu - a + b], axis=1)


def exact_hits(origins, dirs, t_min, ray_idx, prim_idx, gs: GaussianSet, frames=None):
    """Filter candidate pairs down to true hits.

    Returns (ray_idx, prim_idx, depth, gauss value) of the surviving pairs, unsorted.
    ``t_min`` is a scalar or per-ray array.
    """
    if frames is None:
        frames = gs.frames()
    ray_idx = np.asarray(ray_idx, dtype=np.int64)
    prim_idx = np.asarray(prim_idx, dtype=np.int64)
    if ray_idx.size == 0:
        return ray_idx, prim_idx, np.zeros(0), np.zeros(0)
    n_rays = dirs.shape[0]
    tm = np.ascontiguousarray(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n_rays,)))
    keep, depth, gval = filter_pairs(
        np.ascontiguousarray(origins, dtype=np.float64), np.ascontiguousarray(dirs, dtype=np.float64), tm,
        ray_idx, prim_idx, np.ascontiguousarray(gs.mu), np.ascontiguousarray(frames),
        np.ascontiguousarray(gs.scale),
    )
    return ray_idx[keep], prim_idx[keep], depth[keep], gval[keep]


def sort_pairs(ray_idx, prim_idx, depth, *rest):
    order = np.lexsort((prim_idx, depth, ray_idx))
    return (ray_idx[order], prim_idx[order], depth[order]) + tuple(a[order] for a in rest)


@dataclass
class PairSet:
    """Sorted contributing pairs for a batch of rays.

    Only pairs reached before the transmittance falls below ``T_STOP``
    are stored; that cut is decided on the detached opacities.
    """

    ray_idx: np.ndarray
    prim_idx: np.ndarray
    n_rays: int

    @classmethod
    def build(cls, origins, dirs, t_min, cand_ray, cand_prim, gs, n_rays, frames=None):
        r, p, z, g = exact_hits(origins, dirs, t_min, cand_ray, cand_prim, gs, frames)
        r, p, _, g = sort_pairs(r, p, z, g)
        return cls.from_sorted(r, p, g, gs, n_rays)

    @classmethod
    def from_sorted(cls, ray_idx, prim_idx, gval, gs, n_rays):
        alpha = np.minimum(gs.opacity()[prim_idx] * gval, ALPHA_CAP)
        keep = early_stop_mask(ray_idx, alpha, T_STOP)
        return cls(ray_idx[keep], prim_idx[keep], n_rays)

    def __len__(self):
        return self.ray_idx.size


# ------------------------------------------------------- differentiable part

@dataclass
class CompositeResult:
    """Per-ray composited quantities (torch tensors)."""

    radiance: torch.Tensor      # (R, 3)
    alpha: torch.Tensor         # (R,)
    depth: torch.Tensor         # (R,)  sum of w_i * ray parameter
    transmittance: torch.Tensor  # (R,) product of (1 - alpha_i) over kept hits
    extra: torch.Tensor | None  # (R, F) composited extra features
    n_pairs: int
    prim_hits: np.ndarray       # per-primitive number of contributing pairs
    pairs: PairSet | None = None


def evaluate_pairs(params: dict, pairs: PairSet, origins: torch.Tensor, dirs: torch.Tensor, degree: int,
                   sh_dirs: torch.Tensor | None = None, extra_fn=None) -> CompositeResult:
    """Evaluate and composite sorted pairs.

    ``extra_fn(prim_idx, frames, ray_dirs) -> (P, F)`` supplies extra per-pair
    features to composite alongside radiance (normals, transparency, ...).
    """
    n_rays = pairs.n_rays
    n_prims = params["mu"].shape[0]
    if len(pairs) == 0:
        z = origins.new_zeros(n_rays)
        extra = None
        if extra_fn is not None:
            f = extra_fn(torch.zeros(0, dtype=torch.long), origins.new_zeros(0, 3, 3), origins.new_zeros(0, 3))
            extra = origins.new_zeros(n_rays, f.shape[1])
        return CompositeResult(origins.new_zeros(n_rays, 3), z, z.clone(), origins.new_ones(n_rays), extra, 0,
                               np.zeros(n_prims, dtype=np.int64), pairs)
    ri = torch.from_numpy(pairs.ray_idx)
    pi = torch.from_numpy(pairs.prim_idx)
    o = origins[ri]
    d = dirs[ri]
    fr = quat_frames_t(params["rot"][pi])
    tu, tv, n = fr[..., 0], fr[..., 1], fr[..., 2]
    mu = params["mu"][pi]
    denom = (d * n).sum(-1)
    depth = ((mu - o) * n).sum(-1) / denom
    rel = o + depth[:, None] * d - mu
    scale = params["scale"][pi]
    u = (rel * tu).sum(-1) / scale[:, 0]
    v = (rel * tv).sum(-1) / scale[:, 1]
    g = torch.exp(-0.5 * (u * u + v * v))
    alpha = (torch.sigmoid(params["opacity_logit"][pi]) * g).clamp_max(ALPHA_CAP)
    sdirs = d if sh_dirs is None else sh_dirs[ri]
    color = eval_sh_t(params["sh"][pi], sdirs, degree)

    feats = [color, depth[:, None]]
    n_extra = 0
    if extra_fn is not None:
        ex = extra_fn(pi, fr, d)
        n_extra = ex.shape[1]
        feats.append(ex)
    feats = torch.cat(feats, dim=1)

    counts = np.bincount(pairs.ray_idx, minlength=n_rays)
    starts = np.cumsum(counts) - counts
    rank = torch.from_numpy(np.arange(len(pairs)) - starts[pairs.ray_idx])
    k = int(counts.max())
    a_dense = alpha.new_zeros(n_rays, k).index_put((ri, rank), alpha)
    trans = torch.cumprod(1.0 - a_dense, dim=1)
    t_excl = torch.cat([a_dense.new_ones(n_rays, 1), trans[:, :-1]], dim=1)
    w = t_excl[ri, rank] * alpha
    out = feats.new_zeros(n_rays, feats.shape[1]).index_add(0, ri, w[:, None] * feats)
    acc = alpha.new_zeros(n_rays).index_add(0, ri, w)
    t_final = trans[:, -1]

    prim_hits = np.bincount(pairs.prim_idx[alpha.detach().numpy() > 0], minlength=n_prims)
    return CompositeResult(
        radiance=out[:, :3],
        alpha=acc,
        depth=out[:, 3],
        transmittance=t_final,
        extra=out[:, 4:] if n_extra else None,
        n_pairs=len(pairs),
        prim_hits=prim_hits,
        pairs=pairs,
    )
