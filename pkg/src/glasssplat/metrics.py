"""Photometric, geometric and mask metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .losses import ssim as ssim_t

PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    with torch.no_grad():
        return float(ssim_t(torch.from_numpy(a), torch.from_numpy(b)))


def _check_mask(mask, shape):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise ValueError(f"mask shape {mask.shape} does not match {shape}")
    if not mask.any():
        raise ValueError("empty evaluation mask")
    return mask


def depth_metrics(z: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> tuple[float, float, float]:
    """(absrel, rmse, delta<1.25 in percent) over ``mask``."""
    z = np.asarray(z, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = _check_mask(mask, gt.shape)
    zv, gv = z[mask], gt[mask]
    if np.any(gv <= 0):
        raise ValueError("ground-truth depth must be positive on the mask")
    absrel = float(np.mean(np.abs(zv - gv) / gv))
    rmse = float(np.sqrt(np.mean((zv - gv) ** 2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(zv / gv, gv / zv)
    ratio = np.where(zv > 0, ratio, np.inf)
    delta = float(100.0 * np.mean(ratio < 1.25))
    return absrel, rmse, delta


def normal_metrics(n: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> tuple[float, float, float]:
    """(mean angular error in degrees, % under 11.25, % under 22.5) over ``mask``."""
    n = np.asarray(n, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = _check_mask(mask, gt.shape[:-1])
    cos = np.clip(np.sum(n[mask] * gt[mask], axis=-1), -1.0, 1.0)
    ang = np.degrees(np.arccos(cos))
    return float(ang.mean()), float(100.0 * np.mean(ang < 11.25)), float(100.0 * np.mean(ang < 22.5))


def mask_iou(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def to_camera(normals: np.ndarray, world_to_camera: np.ndarray) -> np.ndarray:
    return np.asarray(normals) @ np.asarray(world_to_camera).T


@dataclass
class ViewMetrics:
    view: int
    psnr: float
    ssim: float
    absrel: float
    rmse: float
    delta125: float
    mae_deg: float
    acc11_25: float
    acc22_5: float
    mask_iou: float
    glass_absrel: float | None


@dataclass
class EvalReport:
    psnr: float
    ssim: float
    absrel: float
    rmse: float
    delta125: float
    mae_deg: float
    acc11_25: float
    acc22_5: float
    mask_iou: float
    glass_absrel: float | None
    views: list[ViewMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_views(cls, views: list[ViewMetrics]) -> "EvalReport":
        if not views:
            raise ValueError("no views to aggregate")
        keys = ("psnr", "ssim", "absrel", "rmse", "delta125", "mae_deg", "acc11_25", "acc22_5", "mask_iou")
        agg = {k: float(np.mean([getattr(v, k) for v in views])) for k in keys}
        glass = [v.glass_absrel for v in views if v.glass_absrel is not None]
        agg["glass_absrel"] = float(np.mean(glass)) if glass else None
        return cls(**agg, views=list(views))

    def summary(self) -> str:
        head = f"{'view':>6} {'psnr':>7} {'ssim':>6} {'absrel':>7} {'rmse':>7} {'d1.25':>6} " \
               f"{'mae':>6} {'a11':>6} {'a22':>6} {'iou':>5} {'g_abs':>7}"
        lines = [head]

        def row(tag, m):
            g = "-" if m.glass_absrel is None else f"{m.glass_absrel:.4f}"
            return (f"{tag:>6} {m.psnr:7.2f} {m.ssim:6.3f} {m.absrel:7.4f} {m.rmse:7.4f} {m.delta125:6.1f} "
                    f"{m.mae_deg:6.2f} {m.acc11_25:6.1f} {m.acc22_5:6.1f} {m.mask_iou:5.3f} {g:>7}")

        lines += [row(str(v.view), v) for v in self.views]
        lines.append(row("mean", self))
        return "\n".join(lines)


def evaluate_view(pred: dict, view, coverage_threshold: float = 0.5) -> ViewMetrics:
    """Metrics of one rendered view against its ground truth.

    ``pred`` holds (H, W[, C]) arrays: l_o, z, n, t and acc_alpha. Depth is
    the alpha-normalized interface depth. Depth and normals are scored where
    the GT depth is positive and the render covers the pixel with accumulated
    alpha above ``coverage_threshold``; the glass depth error uses every GT
    glass pixel.
    """
    rgb = np.clip(pred["l_o"], 0.0, 1.0)
    gt_rgb = np.clip(view.rgb, 0.0, 1.0)
    acc = pred["acc_alpha"]
    z = np.where(acc > 0, pred["z"] / np.maximum(acc, 1e-12), 0.0)
    valid = (view.depth > 0) & (acc > coverage_threshold)
    if valid.any():
        absrel, rmse, delta = depth_metrics(z, view.depth, valid)
        R = view.camera.orientation
        mae, a11, a22 = normal_metrics(to_camera(pred["n"], R), to_camera(view.normal, R), valid)
    else:
        absrel = rmse = mae = float("inf")
        delta = a11 = a22 = 0.0
    glass = (view.mask > 0.5) & (view.depth > 0)
    glass_absrel = depth_metrics(z, view.depth, glass)[0] if glass.any() else None
    return ViewMetrics(
        view=int(view.index), psnr=psnr(rgb, gt_rgb), ssim=ssim(rgb, gt_rgb),
        absrel=absrel, rmse=rmse, delta125=delta, mae_deg=mae, acc11_25=a11, acc22_5=a22,
        mask_iou=mask_iou(pred["t"] > 0.5, view.mask > 0.5), glass_absrel=glass_absrel,
    )
