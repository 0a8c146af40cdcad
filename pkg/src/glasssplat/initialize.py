"""Initial primitive sets from the dataset's depth samples and a reflection grid."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .dataset import SceneData
from .losses import luma
from .scene import S_MIN, DecomposedScene, GaussianSet, quat_from_normal, rgb_to_sh_dc, sh_coeff_count
from .synthgen import shade_diffuse

GLASS_LUMA = 0.05


def _logit(p):
    return float(np.log(p / (1.0 - p)))


def knn_scale(pts: np.ndarray, k: int = 3, factor: float = 0.5) -> np.ndarray:
    """``factor`` times the mean distance to the ``k`` nearest neighbours, floored at the scale minimum."""
    if len(pts) < 2:
        return np.full(len(pts), 0.05)
    kk = min(k, len(pts) - 1)
    d, _ = cKDTree(pts).query(pts, k=kk + 1)
    return np.maximum(factor * d[:, 1:].mean(axis=1), S_MIN)


def make_set(mu, normals, rgb, opacity: float, sh_degree: int, interface: bool = False,
             trans_logit: float = -2.0, spec_logit: float = -4.0, scale=None) -> GaussianSet:
    n = len(mu)
    if n == 0:
        return GaussianSet.empty(sh_degree, interface)
    s = knn_scale(mu) if scale is None else np.broadcast_to(scale, (n,))
    sh = np.zeros((n, sh_coeff_count(sh_degree), 3))
    sh[:, 0] = rgb_to_sh_dc(rgb)
    gs = GaussianSet(
        mu=np.asarray(mu, dtype=np.float64),
        rot=np.array([quat_from_normal(v) for v in normals]),
        scale=np.repeat(np.asarray(s, dtype=np.float64)[:, None], 2, axis=1),
        opacity_logit=np.full(n, _logit(opacity)),
        sh=sh,
    )
    if interface:
        gs.trans_logit = np.full(n, trans_logit)
        gs.spec_logit = np.full(n, spec_logit)
    return gs


def sample_pixels(data: SceneData, n: int, rng: np.random.Generator):
    """Uniform samples over training pixels with valid depth: (view index, flat pixel index)."""
    pools = []
    for vi in data.train:
        v = data.views[vi]
        pix = np.nonzero(v.depth.reshape(-1) > 0)[0]
        pools.append(np.stack([np.full(pix.size, vi), pix], axis=1))
    pool = np.concatenate(pools) if pools else np.zeros((0, 2), np.int64)
    if len(pool) == 0:
        raise ValueError("dataset has no pixels with valid depth")
    pick = rng.choice(len(pool), size=n, replace=len(pool) < n)
    return pool[pick]


def refl_grid(lo, hi, n: int, k: int, rng: np.random.Generator, sh_degree: int) -> GaussianSet:
    """K random primitives per cell of an n^3 grid over the box [lo, hi]."""
    cells = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), axis=-1).reshape(-1, 3)
    size = (hi - lo) / n
    mu = lo + (np.repeat(cells, k, axis=0) + rng.uniform(0, 1, (len(cells) * k, 3))) * size
    normals = rng.standard_normal(mu.shape)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    rgb = rng.uniform(0.0, 1.0, mu.shape)
    scale = max(float(size.mean()) / (4.0 * k ** 0.5), S_MIN)
    return make_set(mu, normals, rgb, 0.1, sh_degree, scale=scale)


def initialize(data: SceneData, seed: int, n_points: int = 2000, grid_n: int = 8, grid_k: int = 5,
               sh_degree: int = 2, f0: float = 0.04, jitter: float = 0.005) -> DecomposedScene:
    """Seed the interface and transmission sets from depth samples and the reflection set from a grid.

    Half of ``n_points`` pixel samples become interface primitives at the
    prior depth. Each sample is duplicated with jitter into the transmission
    set at the first diffuse surface along its ray, standing in for a
    structure-from-motion cloud that sees through thin glass. Without the
    analytic scene the duplicates reuse the sample itself, skipping pixels whose
    albedo marks them as glass.
    """
    if n_points < 2:
        raise ValueError("need at least two initial points")
    if grid_n < 1 or grid_k < 1:
        raise ValueError("reflection grid needs N >= 1 and K >= 1")
    rng = np.random.default_rng(seed)
    samples = sample_pixels(data, n_points // 2, rng)

    mu, nrm, rgb, t_mu, t_nrm, t_rgb = [], [], [], [], [], []
    for vi in np.unique(samples[:, 0]):
        v = data.views[vi]
        pix = samples[samples[:, 0] == vi, 1]
        d = v.camera.pixel_dirs().reshape(-1, 3)[pix]
        o = np.broadcast_to(v.camera.position, d.shape)
        depth = v.depth.reshape(-1)[pix]
        mu.append(o + depth[:, None] * d)
        nrm.append(v.normal.reshape(-1, 3)[pix])
        rgb.append(v.rgb.reshape(-1, 3)[pix])
        if data.analytic is not None:
            rad, td = shade_diffuse(data.analytic, o, d)
            ok = np.isfinite(td)
            t_mu.append(o[ok] + td[ok, None] * d[ok])
            t_nrm.append(-d[ok])
            t_rgb.append(rad[ok])
        else:
            ok = luma(v.albedo.reshape(-1, 3)[pix]) >= GLASS_LUMA
            t_mu.append(mu[-1][ok])
            t_nrm.append(nrm[-1][ok])
            t_rgb.append(rgb[-1][ok])
    mu, nrm, rgb = (np.concatenate(a) for a in (mu, nrm, rgb))
    t_mu, t_nrm, t_rgb = (np.concatenate(a) for a in (t_mu, t_nrm, t_rgb))
    radius = float(np.linalg.norm(mu - mu.mean(axis=0), axis=1).max())
    t_mu = t_mu + jitter * radius * rng.standard_normal(t_mu.shape)

    intr = make_set(mu, nrm, rgb, 0.5, sh_degree, interface=True)
    trans = make_set(t_mu, t_nrm, t_rgb, 0.5, sh_degree)
    allpts = np.concatenate([mu, t_mu])
    refl = refl_grid(allpts.min(axis=0), allpts.max(axis=0), grid_n, grid_k, rng, sh_degree)
    return DecomposedScene(intr, trans, refl, sh_degree=sh_degree, f0=f0)
