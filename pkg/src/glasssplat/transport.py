"""Transparency-gated shading of the G-buffer with traced transmission and reflection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .raster import rasterize_t
from .scene import Camera, DecomposedScene
from .splat import set_tensors
from .trace import EPS_OFFSET, GaussianBvh, build_bvh, trace_t

MIN_COVERAGE = 1e-3
LAYERS = ("l_o", "l_intr", "l_trans", "l_refl", "z", "z_trans", "n", "t", "s", "k_s")


def fresnel_schlick(omega_o, n, f0):
    cos = np.maximum(0.0, np.sum(np.asarray(omega_o) * np.asarray(n), axis=-1))
    return f0 + (1.0 - f0) * (1.0 - cos) ** 5


def specular_weight(s, F):
    return s + (1.0 - s) * F


def reflect_dir(omega_o, n):
    omega_o = np.asarray(omega_o, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return 2.0 * np.sum(n * omega_o, axis=-1, keepdims=True) * n - omega_o


@dataclass
class ShadingInputs:
    n: np.ndarray
    t: float
    s: float
    l_intr: np.ndarray
    z: float
    acc_alpha: float
    omega_o: np.ndarray
    l_trans: np.ndarray
    trans_alpha: float
    l_refl: np.ndarray
    refl_alpha: float
    f0: float
    background: np.ndarray = None

    def __post_init__(self):
        if self.background is None:
            self.background = np.zeros(3)


@dataclass
class ShadedPixel:
    l_o: np.ndarray
    l_opaque: np.ndarray
    l_transparent: np.ndarray
    l_intr: np.ndarray
    l_trans: np.ndarray
    l_refl: np.ndarray
    k_s: float
    fresnel: float


def shade_pixel(inp: ShadingInputs) -> ShadedPixel:
    """Shade one pixel; residual coverage of every branch falls through to the background."""
    bg = np.asarray(inp.background, dtype=np.float64)
    n = np.asarray(inp.n, dtype=np.float64)
    if n @ inp.omega_o < 0:
        n = -n
    F = float(fresnel_schlick(inp.omega_o, n, inp.f0))
    k = specular_weight(inp.s, F)
    l_intr = inp.l_intr + (1.0 - inp.acc_alpha) * bg
    l_trans = inp.l_trans + (1.0 - inp.trans_alpha) * bg
    l_refl = inp.l_refl + (1.0 - inp.refl_alpha) * bg
    l_opaque = (1.0 - k) * l_intr + k * l_refl
    l_transparent = (1.0 - k) * l_trans + k * l_refl
    l_o = (1.0 - inp.t) * l_opaque + inp.t * l_transparent
    return ShadedPixel(l_o, l_opaque, l_transparent, l_intr, l_trans, l_refl, k, F)


def shade_t(gb: dict, omega_o, tr: dict, rf: dict, f0, background):
    """Tensor version of :func:`shade_pixel` over flat per-pixel arrays."""
    n = gb["n"]
    sign = torch.where((n * omega_o).sum(-1, keepdim=True).detach() < 0, -1.0, 1.0).to(n.dtype)
    n = n * sign
    cos = (omega_o * n).sum(-1).clamp_min(0.0)
    F = f0 + (1.0 - f0) * (1.0 - cos) ** 5
    k = gb["s"] + (1.0 - gb["s"]) * F
    bg = background
    l_intr = gb["l_intr"] + (1.0 - gb["acc_alpha"])[:, None] * bg
    l_trans = tr["radiance"] + (1.0 - tr["alpha"])[:, None] * bg
    l_refl = rf["radiance"] + (1.0 - rf["alpha"])[:, None] * bg
    kk = k[:, None]
    l_opaque = (1.0 - kk) * l_intr + kk * l_refl
    l_transparent = (1.0 - kk) * l_trans + kk * l_refl
    t = gb["t"][:, None]
    l_o = (1.0 - t) * l_opaque + t * l_transparent
    return {"l_o": l_o, "l_intr": l_intr, "l_trans": l_trans, "l_refl": l_refl, "k_s": k, "fresnel": F}


@dataclass
class SceneBvhs:
    trans: GaussianBvh
    refl: GaussianBvh

    @classmethod
    def build(cls, scene: DecomposedScene) -> "SceneBvhs":
        return cls(build_bvh(scene.trans), build_bvh(scene.refl))


def render_t(scene: DecomposedScene, params: dict, cam: Camera, bvhs: SceneBvhs | None = None,
             f0=None, background=None, cache: dict | None = None) -> dict:
    """Differentiable hybrid render; returns flat per-pixel tensors and statistics.

    ``params`` maps set name to its tensor dict. ``scene`` provides the
    detached geometry for hit finding and the global settings. A ``cache``
    dict is filled with the hit pairs of each stage on first use and reused
    afterwards, which freezes the discrete structure (used for gradient checks).
    """
    if cache is None:
        cache = {}
    if bvhs is None and not {"trans", "refl"} <= cache.keys():
        bvhs = SceneBvhs.build(scene)
    deg = scene.sh_degree
    f0 = torch.as_tensor(scene.f0 if f0 is None else f0, dtype=torch.float64)
    bg = torch.as_tensor(scene.background if background is None else background, dtype=torch.float64)
    dirs_np = cam.pixel_dirs().reshape(-1, 3)
    n_pix = dirs_np.shape[0]
    dirs = torch.from_numpy(dirs_np)
    origins = torch.from_numpy(np.ascontiguousarray(np.broadcast_to(cam.position, dirs_np.shape)))

    gb = rasterize_t(params["intr"], scene.intr, cam, deg, origins, dirs, pairs=cache.get("intr"))
    cache["intr"] = gb["pairs"]
    active = gb["acc_alpha"].detach().numpy() >= MIN_COVERAGE
    omega_o = -dirs
    # secondary rays leave from the composited interface depth
    x = origins + gb["z"][:, None] * dirs

    tr = trace_t(params["trans"], scene.trans, bvhs and bvhs.trans, x, dirs, EPS_OFFSET, deg, active,
                 pairs=cache.get("trans"))
    cache["trans"] = tr.pairs
    n = gb["n"]
    sign = torch.where((n * omega_o).sum(-1, keepdim=True).detach() < 0, -1.0, 1.0).to(n.dtype)
    nf = n * sign
    wr = 2.0 * (nf * omega_o).sum(-1, keepdim=True) * nf - omega_o
    refl_active = active & (nf.detach().norm(dim=-1).numpy() > 0.5)
    wr = torch.where(torch.from_numpy(refl_active)[:, None], wr, dirs)
    rf = trace_t(params["refl"], scene.refl, bvhs and bvhs.refl, x, wr, EPS_OFFSET, deg, refl_active,
                 pairs=cache.get("refl"))
    cache["refl"] = rf.pairs

    trd = {"radiance": tr.radiance, "alpha": tr.alpha}
    rfd = {"radiance": rf.radiance, "alpha": rf.alpha}
    sh = shade_t(gb, omega_o, trd, rfd, f0, bg)
    z_trans = tr.depth + gb["z"] * tr.alpha
    return {
        **sh,
        "z": gb["z"], "z_trans": z_trans, "trans_alpha": tr.alpha, "refl_alpha": rf.alpha,
        "n": gb["n"], "t": gb["t"], "s": gb["s"], "acc_alpha": gb["acc_alpha"],
        "hits": {"intr": gb["prim_hits"], "trans": tr.prim_hits, "refl": rf.prim_hits},
        "n_pix": n_pix,
    }


def to_images(out: dict, cam: Camera) -> dict[str, np.ndarray]:
    H, W = cam.height, cam.width
    imgs = {}
    for k, v in out.items():
        if not isinstance(v, torch.Tensor):
            continue
        a = v.detach().numpy()
        imgs[k] = a.reshape(H, W, -1) if a.ndim == 2 else a.reshape(H, W)
    return imgs


def render(scene: DecomposedScene, cam: Camera, bvhs: SceneBvhs | None = None) -> dict[str, np.ndarray]:
    """All render layers as (H, W[, C]) arrays."""
    params = {k: set_tensors(v) for k, v in scene.sets().items()}
    with torch.no_grad():
        out = render_t(scene, params, cam, bvhs)
    return to_images(out, cam)
