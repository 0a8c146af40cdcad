"""Scene files, PFM rasters and PNG previews."""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import DecomposedScene, GaussianSet

SCENE_FORMAT = "glasssplat-scene/1"


# ---------------------------------------------------------------- scene file

def _set_records(gs: GaussianSet) -> list[dict]:
    recs = []
    for i in range(len(gs)):
        r = {
            "mu": gs.mu[i].tolist(),
            "rot": gs.rot[i].tolist(),
            "scale": gs.scale[i].tolist(),
            "opacity_logit": float(gs.opacity_logit[i]),
            "sh": gs.sh[i].tolist(),
        }
        if gs.is_interface:
            r["trans_logit"] = float(gs.trans_logit[i])
            r["spec_logit"] = float(gs.spec_logit[i])
        recs.append(r)
    return recs


def _set_from_records(recs: list[dict], sh_degree: int, interface: bool) -> GaussianSet:
    if not recs:
        return GaussianSet.empty(sh_degree, interface)
    gs = GaussianSet(
        mu=np.array([r["mu"] for r in recs], dtype=np.float64),
        rot=np.array([r["rot"] for r in recs], dtype=np.float64),
        scale=np.array([r["scale"] for r in recs], dtype=np.float64),
        opacity_logit=np.array([r["opacity_logit"] for r in recs], dtype=np.float64),
        sh=np.array([r["sh"] for r in recs], dtype=np.float64),
    )
    if interface:
        gs.trans_logit = np.array([r.get("trans_logit", -4.0) for r in recs], dtype=np.float64)
        gs.spec_logit = np.array([r.get("spec_logit", -4.0) for r in recs], dtype=np.float64)
    return gs


def scene_to_dict(scene: DecomposedScene, iteration: int | None = None) -> dict:
    d = {
        "format": SCENE_FORMAT,
        "sh_degree": scene.sh_degree,
        "f0": float(scene.f0),
        "background": [float(x) for x in scene.background],
        "intr": _set_records(scene.intr),
        "trans": _set_records(scene.trans),
        "refl": _set_records(scene.refl),
    }
    if iteration is not None:
        d["iteration"] = int(iteration)
    return d


def scene_from_dict(d: dict) -> DecomposedScene:
    deg = int(d["sh_degree"])
    return DecomposedScene(
        intr=_set_from_records(d["intr"], deg, True),
        trans=_set_from_records(d["trans"], deg, False),
        refl=_set_from_records(d["refl"], deg, False),
        sh_degree=deg,
        f0=float(d["f0"]),
        background=np.array(d["background"], dtype=np.float64),
    )


def save_scene(scene: DecomposedScene, path, iteration: int | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as f:
        json.dump(scene_to_dict(scene, iteration), f, separators=(",", ":"))
    os.replace(tmp, path)


def load_scene(path) -> tuple[DecomposedScene, int | None]:
    with open(path) as f:
        d = json.load(f)
    return scene_from_dict(d), d.get("iteration")


# ---------------------------------------------------------------- rasters

def write_pfm(path, img: np.ndarray) -> None:
    """Little-endian PFM (scale -1.0). Rows are stored bottom-to-top."""
    a = np.asarray(img, dtype="<f4")
    if a.ndim == 2:
        header = "Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        header = "PF"
    else:
        raise ValueError(f"PFM needs 1 or 3 channels, got shape {a.shape}")
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        f.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        w, h = (int(x) for x in f.readline().split())
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        c = 3 if header == b"PF" else 1
        data = np.frombuffer(f.read(), dtype=dtype, count=w * h * c)
    a = data.reshape(h, w, c) if c == 3 else data.reshape(h, w)
    return a[::-1].astype(np.float64)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def to_uint8(x: np.ndarray) -> np.ndarray:
    return (np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def colormap(x: np.ndarray, vmin=None, vmax=None, cmap: str = "viridis") -> np.ndarray:
    from matplotlib import colormaps

    x = np.asarray(x, dtype=np.float64)
    lo = float(np.min(x)) if vmin is None else vmin
    hi = float(np.max(x)) if vmax is None else vmax
    y = (x - lo) / (hi - lo) if hi > lo else np.zeros_like(x)
    return colormaps[cmap](np.clip(y, 0, 1))[..., :3]


def write_png(path, img: np.ndarray, kind: str = "radiance") -> None:
    """8-bit preview. kind: radiance (linear -> sRGB), normal, mask, or scalar (colormapped)."""
    img = np.asarray(img, dtype=np.float64)
    if kind == "radiance":
        out = to_uint8(linear_to_srgb(img))
    elif kind == "normal":
        out = to_uint8(0.5 * (img + 1.0))
    elif kind == "mask":
        out = to_uint8(img)
    elif kind == "scalar":
        out = to_uint8(colormap(img))
    else:
        raise ValueError(f"unknown preview kind {kind!r}")
    Image.fromarray(out).save(path, optimize=False)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float64) / 255.0
