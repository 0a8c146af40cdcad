"""On-disk dataset layout and prior bundles.

Layout per scene::

    scene_<k>/cameras.json
    scene_<k>/analytic.json
    scene_<k>/view_<i>_{rgb.png, rgb.pfm, depth.pfm, normal.pfm, albedo.pfm, mask.png}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import read_pfm, read_png, write_pfm, write_png
from .scene import Camera
from .synthgen import AnalyticScene, generate_scene, generate_trajectory, oracle_render, split_indices

CAMERA_CONVENTION = (
    "world_to_camera is a row-major 3x3 rotation R with p_cam = R (p_world - position); "
    "camera axes +x right, +y down, +z forward; pixel (u, v) = (fx x/z + cx, fy y/z + cy) "
    "with pixel centers at integer + 0.5. Depth maps store distance along the unit pixel ray; "
    "normal maps store world-space unit normals facing the camera."
)


@dataclass
class View:
    index: int
    camera: Camera
    rgb: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    mask: np.ndarray


@dataclass
class SceneData:
    root: Path
    views: list[View]
    train: list[int]
    test: list[int]
    analytic: AnalyticScene | None = None

    def train_views(self) -> list[View]:
        return [self.views[i] for i in self.train]

    def test_views(self) -> list[View]:
        return [self.views[i] for i in self.test]


def scene_seeds(seed: int, n_scenes: int) -> list[int]:
    """Independent per-scene integer seeds spawned from one root seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_scenes)]


def write_scene_data(root, analytic: AnalyticScene, cams: list[Camera]) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    train, test = split_indices(len(cams))
    meta = {
        "convention": CAMERA_CONVENTION,
        "train": train,
        "test": test,
        "cameras": [c.to_dict() for c in cams],
    }
    (root / "cameras.json").write_text(json.dumps(meta, indent=1))
    (root / "analytic.json").write_text(json.dumps(analytic.to_dict(), indent=1))
    for i, cam in enumerate(cams):
        gt = oracle_render(analytic, cam)
        p = root / f"view_{i:03d}"
        write_png(f"{p}_rgb.png", gt["rgb"], "radiance")
        write_pfm(f"{p}_rgb.pfm", gt["rgb"])
        write_pfm(f"{p}_depth.pfm", gt["depth"])
        write_pfm(f"{p}_normal.pfm", gt["normal"])
        write_pfm(f"{p}_albedo.pfm", gt["albedo"])
        write_png(f"{p}_mask.png", gt["mask"], "mask")
    return root


def generate_dataset(out, seed: int, n_scenes: int = 5, n_views: int = 48, res: int = 64,
                     room=(6.0, 6.0, 3.0), n_boxes: int = 3, n_panels: int = 1,
                     container_size: float | None = None) -> list[Path]:
    out = Path(out)
    paths = []
    for k, s in enumerate(scene_seeds(seed, n_scenes)):
        analytic = generate_scene(s, room, n_boxes, n_panels, container_size)
        cams = generate_trajectory(analytic, n_views, s, width=res, height=res)
        paths.append(write_scene_data(out / f"scene_{k}", analytic, cams))
    return paths


def load_scene_data(root) -> SceneData:
    root = Path(root)
    meta_path = root / "cameras.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"no cameras.json under {root}")
    meta = json.loads(meta_path.read_text())
    views = []
    for i, cd in enumerate(meta["cameras"]):
        p = root / f"view_{i:03d}"
        views.append(View(
            index=i,
            camera=Camera.from_dict(cd),
            rgb=read_pfm(f"{p}_rgb.pfm"),
            depth=read_pfm(f"{p}_depth.pfm"),
            normal=read_pfm(f"{p}_normal.pfm"),
            albedo=read_pfm(f"{p}_albedo.pfm"),
            mask=(read_png(f"{p}_mask.png") > 0.5).astype(np.float64),
        ))
    analytic = None
    if (root / "analytic.json").exists():
        analytic = AnalyticScene.from_dict(json.loads((root / "analytic.json").read_text()))
    return SceneData(root, views, meta["train"], meta["test"], analytic)


@dataclass
class PriorBundle:
    """Per-view depth, normal and diffuse-albedo priors."""

    depth: np.ndarray
    normal: np.ndarray
    albedo: np.ndarray
    provenance: str = "synthetic-GT"


def make_priors(view: View, rng: np.random.Generator | None = None, depth_noise: float = 0.0,
                normal_noise_deg: float = 0.0) -> PriorBundle:
    """Priors from ground truth, optionally perturbed.

    Depth noise is zero-mean Gaussian relative to depth; normals are tilted by
    a random angle up to ``normal_noise_deg`` about a random tangent axis.
    """
    depth = view.depth.copy()
    normal = view.normal.copy()
    noisy = depth_noise > 0 or normal_noise_deg > 0
    if noisy:
        if rng is None:
            raise ValueError("noisy priors need an rng")
        if depth_noise > 0:
            depth = depth * (1.0 + depth_noise * rng.standard_normal(depth.shape))
        if normal_noise_deg > 0:
            axis = rng.standard_normal(normal.shape)
            axis -= np.sum(axis * normal, axis=-1, keepdims=True) * normal
            axis /= np.maximum(np.linalg.norm(axis, axis=-1, keepdims=True), 1e-12)
            ang = np.radians(normal_noise_deg) * rng.uniform(0, 1, normal.shape[:-1])[..., None]
            tilted = np.cos(ang) * normal + np.sin(ang) * axis
            valid = np.linalg.norm(normal, axis=-1, keepdims=True) > 0.5
            normal = np.where(valid, tilted / np.maximum(np.linalg.norm(tilted, axis=-1, keepdims=True), 1e-12), 0)
    return PriorBundle(depth, normal, view.albedo.copy(), "synthetic-GT+noise" if noisy else "synthetic-GT")
