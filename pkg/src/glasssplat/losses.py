"""Training losses. Inputs are torch tensors; every loss returns a scalar tensor."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class LossWeights:
    l1: float = 0.8
    ssim: float = 0.2
    lpips: float = 0.0
    depth: float = 0.1
    normal: float = 0.05
    trans: float = 0.1
    nc: float = 0.05
    smooth: float = 0.01

    def __post_init__(self):
        vals = [self.l1, self.ssim, self.lpips, self.depth, self.normal, self.trans, self.nc, self.smooth]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("loss weights must be finite and non-negative")
        if self.lpips != 0.0:
            raise ValueError("the perceptual term is not available; lpips weight must be 0")


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(x ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def ssim(img1: torch.Tensor, img2: torch.Tensor) -> torch.Tensor:
    """Mean SSIM of two (H, W, C) images on [0, 1] data.

    11x11 Gaussian window (sigma 1.5), zero padding at the borders.
    """
    if img1.shape != img2.shape:
        raise ValueError(f"shape mismatch {tuple(img1.shape)} vs {tuple(img2.shape)}")
    c = img1.shape[-1]
    a = img1.permute(2, 0, 1)[None]
    b = img2.permute(2, 0, 1)[None]
    w = gaussian_window().to(a.dtype).expand(c, 1, SSIM_WINDOW, SSIM_WINDOW).contiguous()
    pad = SSIM_WINDOW // 2

    def filt(x):
        return F.conv2d(x, w, padding=pad, groups=c)

    mu1, mu2 = filt(a), filt(b)
    s11 = filt(a * a) - mu1 * mu1
    s22 = filt(b * b) - mu2 * mu2
    s12 = filt(a * b) - mu1 * mu2
    num = (2 * mu1 * mu2 + SSIM_C1) * (2 * s12 + SSIM_C2)
    den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
    return (num / den).mean()


def photometric_loss(render: torch.Tensor, gt: torch.Tensor, weights: LossWeights):
    """Returns (total, l1, 1 - ssim)."""
    if render.shape != gt.shape:
        raise ValueError(f"shape mismatch {tuple(render.shape)} vs {tuple(gt.shape)}")
    l1 = (render - gt).abs().mean()
    dssim = 1.0 - ssim(render, gt) if weights.ssim > 0 else render.new_zeros(())
    return weights.l1 * l1 + weights.ssim * dssim, l1, dssim


def si_align(z: np.ndarray, zhat: np.ndarray):
    """Closed-form least-squares (w, q) minimizing sum (w z + q - zhat)^2, or None if degenerate."""
    n = z.size
    sz, szz = z.sum(), (z * z).sum()
    det = n * szz - sz * sz
    if n < 2 or abs(det) < 1e-12:
        return None
    szh, szzh = zhat.sum(), (z * zhat).sum()
    w = (n * szzh - sz * szh) / det
    q = (szz * szh - sz * szzh) / det
    return float(w), float(q)


def si_depth_loss(z: torch.Tensor, zhat: torch.Tensor, mask: torch.Tensor | None = None):
    """Scale-and-shift invariant depth loss.

    (w, q) are solved in closed form on detached depths and held constant in
    the backward pass. Returns (loss, (w, q)).
    """
    if mask is None:
        mask = torch.ones_like(z, dtype=torch.bool)
    zv = z[mask]
    zh = zhat[mask]
    wq = si_align(zv.detach().numpy().astype(np.float64), zh.detach().numpy().astype(np.float64))
    if wq is None:
        log.warning("degenerate depth alignment; skipping depth loss")
        return z.sum() * 0.0, (1.0, 0.0)
    w, q = wq
    return ((w * zv + q - zh) ** 2).mean(), (w, q)


def masked_normal_loss(n: torch.Tensor, nhat: torch.Tensor, valid: torch.Tensor, use_prior_mask: bool,
                       tau_n: float = 0.3):
    """Mean (1 - cos) over valid pixels; with the prior mask, only where cos >= tau_n."""
    cos = (n * nhat).sum(-1)
    m = valid
    if use_prior_mask:
        m = m & (cos.detach() >= tau_n)
    if not bool(m.any()):
        return cos.sum() * 0.0
    return (1.0 - cos[m]).mean()


def luma(rgb: np.ndarray) -> np.ndarray:
    return np.asarray(rgb) @ LUMA


def bootstrap_mask(z_intr: np.ndarray, z_trans: np.ndarray, albedo: np.ndarray, radius: float,
                   tau_d: float = 0.01, gamma_a: float = 0.05, trans_alpha: np.ndarray | None = None,
                   min_trans_alpha: float = 0.1) -> np.ndarray:
    """Binary transparency mask from depth separation and low diffuse albedo.

    Depth separation is divided by ``radius`` (scene bounding-sphere radius)
    before comparison with ``tau_d``; RGB albedo is reduced to luma.
    """
    dz = np.abs(np.asarray(z_intr) - np.asarray(z_trans)) / radius
    if trans_alpha is not None:
        dz = np.where(np.asarray(trans_alpha) < min_trans_alpha, 0.0, dz)
    a = np.asarray(albedo, dtype=np.float64)
    if a.ndim == dz.ndim + 1:
        a = luma(a)
    return ((dz > tau_d) & (a < gamma_a)).astype(np.float64)


def transparency_loss(t: torch.Tensor, m_trans: torch.Tensor, weight: float = 1.0):
    return weight * (m_trans - t).abs().mean()


def edge_weights(image: torch.Tensor | None, shape, sigma_e: float = 0.1):
    """exp(-|grad I| / sigma_e) for horizontal and vertical neighbour pairs."""
    H, W = shape
    if image is None:
        return torch.ones(H, W - 1, dtype=torch.float64), torch.ones(H - 1, W, dtype=torch.float64)
    g = image.mean(-1) if image.ndim == 3 else image
    gx = (g[:, 1:] - g[:, :-1]).abs()
    gy = (g[1:, :] - g[:-1, :]).abs()
    return torch.exp(-gx / sigma_e), torch.exp(-gy / sigma_e)


def depth_normals(z: torch.Tensor, origin: torch.Tensor, dirs: torch.Tensor):
    """Normals from cross products of neighbour differences of unprojected depth.

    z: (H, W) distance along the unit pixel rays ``dirs`` (H, W, 3). Returns
    (H-1, W-1, 3) unit normals oriented towards the camera.
    """
    p = origin + z[..., None] * dirs
    dx = p[:-1, 1:] - p[:-1, :-1]
    dy = p[1:, :-1] - p[:-1, :-1]
    nd = torch.cross(dx, dy, dim=-1)
    nd = nd / nd.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    facing = (nd * -dirs[:-1, :-1]).sum(-1, keepdim=True).detach()
    return torch.where(facing < 0, -nd, nd)


def depth_normal_consistency(z: torch.Tensor, n: torch.Tensor, origin: torch.Tensor, dirs: torch.Tensor,
                             valid: torch.Tensor, image: torch.Tensor | None = None, sigma_e: float = 0.1):
    """Mean edge-weighted (1 - n . n_depth) over pixels whose right/down neighbours are valid."""
    nd = depth_normals(z, origin, dirs)
    v = valid[:-1, :-1] & valid[1:, :-1] & valid[:-1, 1:]
    if not bool(v.any()):
        return z.sum() * 0.0
    wx, wy = edge_weights(image, z.shape, sigma_e)
    w = torch.minimum(wx[:-1, :], wy[:, :-1])
    cos = (n[:-1, :-1] * nd).sum(-1)
    return (w * (1.0 - cos))[v].sum() / v.sum()


def normal_smoothness(n: torch.Tensor, valid: torch.Tensor, image: torch.Tensor | None = None,
                      sigma_e: float = 0.1):
    """Edge-aware L1 smoothness of the normal map."""
    wx, wy = edge_weights(image, n.shape[:2], sigma_e)
    vx = valid[:, 1:] & valid[:, :-1]
    vy = valid[1:, :] & valid[:-1, :]
    if not bool(vx.any() or vy.any()):
        return n.sum() * 0.0
    ex = (wx * (n[:, 1:] - n[:, :-1]).abs().sum(-1))[vx]
    ey = (wy * (n[1:, :] - n[:-1, :]).abs().sum(-1))[vy]
    return (ex.sum() + ey.sum()) / (vx.sum() + vy.sum())
