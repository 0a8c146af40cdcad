import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from glasssplat.dataset import generate_dataset, load_scene_data  # noqa: E402
from glasssplat.scene import Camera, DecomposedScene, GaussianSet, sh_coeff_count  # noqa: E402


def random_quats(rng, n):
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_set(rng, n, center=(0.0, 0.0, 0.0), spread=1.0, scale=(0.05, 0.4), degree=2, interface=False,
               sh_amp=0.3):
    k = sh_coeff_count(degree)
    gs = GaussianSet(
        mu=np.asarray(center) + rng.uniform(-spread, spread, (n, 3)),
        rot=random_quats(rng, n),
        scale=rng.uniform(*scale, (n, 2)),
        opacity_logit=rng.uniform(-2.0, 3.0, n),
        sh=rng.uniform(-sh_amp, sh_amp, (n, k, 3)),
    )
    if interface:
        gs.trans_logit = rng.uniform(-3.0, 3.0, n)
        gs.spec_logit = rng.uniform(-3.0, 3.0, n)
    return gs


def front_camera(res=32, dist=4.0, fov=60.0):
    return Camera.look_at((0.0, -dist, 0.0), (0.0, 0.0, 0.0), width=res, height=res, fov_deg=fov)


def random_scene(rng, n_intr=4, n_trans=3, n_refl=3, degree=2, f0=0.04):
    sc = DecomposedScene.empty(degree, f0, background=rng.uniform(0, 0.3, 3))
    sc.intr = random_set(rng, n_intr, spread=0.6, scale=(0.3, 0.8), degree=degree, interface=True)
    sc.trans = random_set(rng, n_trans, center=(0, 1.5, 0), spread=0.6, scale=(0.4, 1.0), degree=degree)
    sc.refl = random_set(rng, n_refl, center=(0, -1.5, 0), spread=1.0, scale=(0.5, 1.2), degree=degree)
    return sc


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    """One generated scene: 16 views at 24x24."""
    root = tmp_path_factory.mktemp("tiny")
    generate_dataset(root, seed=3, n_scenes=1, n_views=16, res=24)
    return load_scene_data(root / "scene_0")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
