import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from oracles import ssim_textbook
from glasssplat.losses import (
    LossWeights, bootstrap_mask, depth_normal_consistency, luma, masked_normal_loss, normal_smoothness,
    photometric_loss, si_align, si_depth_loss, ssim, transparency_loss,
)
from glasssplat.scene import Camera

T = torch.from_numpy


def test_ssim_matches_textbook():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 1, (32, 32, 3))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    assert abs(float(ssim(T(a), T(b))) - ssim_textbook(a, b)) <= 1e-8


def test_ssim_identity_and_range():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (16, 16, 3))
    assert abs(float(ssim(T(a), T(a))) - 1.0) < 1e-12
    v = float(ssim(T(a), T(1 - a)))
    assert -1 <= v <= 1
    with pytest.raises(ValueError):
        ssim(T(a), T(a[:8]))


def test_photometric_examples():
    w = LossWeights()
    rng = np.random.default_rng(2)
    gt = rng.uniform(0.1, 0.8, (12, 12, 3))
    tot, l1, dssim = photometric_loss(T(gt), T(gt), w)
    assert float(tot) == 0.0
    _, l1, _ = photometric_loss(T(gt + 0.1), T(gt), w)
    assert abs(float(l1) * w.l1 - 0.1 * w.l1) < 1e-12


def test_loss_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(l1=-1.0)
    with pytest.raises(ValueError):
        LossWeights(lpips=0.1)


def test_si_depth_identity_and_affine():
    rng = np.random.default_rng(3)
    zh = rng.uniform(1, 5, (16, 16))
    loss, (w, q) = si_depth_loss(T(zh), T(zh))
    assert float(loss) < 1e-24 and abs(w - 1) < 1e-12 and abs(q) < 1e-12
    loss, _ = si_depth_loss(T(2 * zh + 3), T(zh))
    assert float(loss) < 1e-20


def test_si_depth_matches_numeric_minimizer():
    rng = np.random.default_rng(4)
    z = rng.uniform(1, 5, (16, 16))
    zh = rng.uniform(1, 5, (16, 16))
    loss, _ = si_depth_loss(T(z), T(zh))
    res = minimize(lambda p: np.mean((p[0] * z + p[1] - zh) ** 2), x0=[1.0, 0.0], method="BFGS",
                   options={"gtol": 1e-12, "maxiter": 200})
    assert abs(float(loss) - res.fun) <= 1e-6
    assert float(loss) <= res.fun + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10).filter(lambda a: abs(a) > 1e-2), st.floats(-10, 10), st.integers(0, 2 ** 31))
def test_si_depth_affine_invariance(a, b, seed):
    rng = np.random.default_rng(seed)
    z = rng.uniform(1, 5, 64)
    zh = rng.uniform(1, 5, 64)
    l0, _ = si_depth_loss(T(z), T(zh))
    l1, _ = si_depth_loss(T(a * z + b), T(zh))
    assert abs(float(l0) - float(l1)) <= 1e-9


def test_si_align_degenerate():
    assert si_align(np.ones(5), np.arange(5.0)) is None
    loss, wq = si_depth_loss(T(np.ones(5)), T(np.arange(5.0)))
    assert float(loss) == 0.0 and wq == (1.0, 0.0)


def test_si_depth_masked():
    z = np.array([1.0, 2.0, 3.0, 100.0])
    zh = np.array([2.0, 4.0, 6.0, 0.0])
    loss, (w, q) = si_depth_loss(T(z), T(zh), T(np.array([True, True, True, False])))
    assert float(loss) < 1e-20 and abs(w - 2) < 1e-12


def _normals(cos, n):
    a = np.zeros((n, 3))
    a[:, 2] = 1
    b = np.zeros((n, 3))
    b[:, 2] = cos
    b[:, 0] = np.sqrt(1 - cos * cos)
    return a, b


def test_masked_normal_examples():
    a, _ = _normals(1.0, 10)
    valid = torch.ones(10, dtype=torch.bool)
    assert float(masked_normal_loss(T(a), T(a), valid, True)) == 0.0
    a, b = _normals(0.0, 10)
    assert float(masked_normal_loss(T(a), T(b), valid, True)) == 0.0
    assert abs(float(masked_normal_loss(T(a), T(b), valid, False)) - 1.0) < 1e-12
    a1, b1 = _normals(0.5, 5)
    a2, b2 = _normals(0.1, 5)
    loss = masked_normal_loss(T(np.vstack([a1, a2])), T(np.vstack([b1, b2])), valid, True, 0.3)
    assert abs(float(loss) - 0.5) < 1e-12


def test_bootstrap_examples():
    one = np.ones(1)
    assert bootstrap_mask(one, one + 0.02, np.full(1, 0.01), 1.0)[0] == 1.0
    assert bootstrap_mask(one, one, np.full(1, 0.0), 1.0)[0] == 0.0
    assert bootstrap_mask(one, one + 5, np.full(1, 0.5), 1.0)[0] == 0.0
    # radius normalization: 0.02 separation is below 0.01 of radius 10
    assert bootstrap_mask(one, one + 0.02, np.full(1, 0.01), 10.0)[0] == 0.0
    # weak transmission coverage zeroes the separation
    assert bootstrap_mask(one, one + 1, np.full(1, 0.0), 1.0, trans_alpha=np.full(1, 0.05))[0] == 0.0


def test_bootstrap_albedo_uses_luma():
    rgb = np.array([[0.0, 0.0, 0.3]])
    assert abs(luma(rgb)[0] - 0.0722 * 0.3) < 1e-15
    assert bootstrap_mask(np.ones(1), np.full(1, 2.0), rgb, 1.0)[0] == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.001, 0.1), st.floats(0, 0.1), st.floats(0.001, 0.1), st.floats(0, 0.1))
def test_bootstrap_monotone(seed, tau, dtau, gamma, dgamma):
    rng = np.random.default_rng(seed)
    zi = rng.uniform(1, 3, 200)
    zt = zi + rng.uniform(0, 0.3, 200)
    alb = rng.uniform(0, 0.2, 200)
    base = bootstrap_mask(zi, zt, alb, 1.0, tau, gamma + dgamma)
    stricter = bootstrap_mask(zi, zt, alb, 1.0, tau + dtau, gamma)
    assert np.all(stricter <= base)


def test_transparency_loss_examples():
    rng = np.random.default_rng(5)
    m = (rng.uniform(0, 1, (8, 8)) > 0.5).astype(float)
    assert float(transparency_loss(T(m), T(m))) == 0.0
    assert float(transparency_loss(T(np.zeros((8, 8))), T(np.ones((8, 8))), 0.1)) == pytest.approx(0.1)
    t = rng.uniform(0, 1, (8, 8))
    assert float(transparency_loss(T(t), T(m))) == pytest.approx(np.mean(np.abs(m - t)), abs=1e-15)


def _plane_depth(cam, n, d0):
    """Distance along each pixel ray to the plane {x : n.x = n.o + d0}."""
    dirs = cam.pixel_dirs()
    return d0 / (dirs @ n), dirs


def test_consistency_fronto_parallel_zero():
    cam = Camera.look_at((0, 0, 0), (0, 1, 0), width=16, height=16)
    n = np.array([0.0, 1.0, 0.0])
    z, dirs = _plane_depth(cam, n, 3.0)
    nmap = np.broadcast_to(-n, (16, 16, 3)).copy()
    valid = torch.ones(16, 16, dtype=torch.bool)
    loss = depth_normal_consistency(T(z), T(nmap), T(cam.position), T(dirs), valid)
    assert float(loss) < 1e-12


def test_consistency_tilted_plane():
    cam = Camera.look_at((0, 0, 0), (0, 1, 0), width=16, height=16)
    n = np.array([0.3, 1.0, -0.2])
    n /= np.linalg.norm(n)
    z, dirs = _plane_depth(cam, n, 3.0)
    nmap = np.broadcast_to(-n, (16, 16, 3)).copy()
    loss = depth_normal_consistency(T(z), T(nmap), T(cam.position), T(dirs), torch.ones(16, 16, dtype=torch.bool))
    assert float(loss) <= 1e-3


def test_consistency_noise_positive_and_smoothness():
    rng = np.random.default_rng(6)
    cam = Camera.look_at((0, 0, 0), (0, 1, 0), width=16, height=16)
    z = rng.uniform(2, 4, (16, 16))
    nmap = np.broadcast_to([0.0, -1.0, 0.0], (16, 16, 3)).copy()
    valid = torch.ones(16, 16, dtype=torch.bool)
    assert float(depth_normal_consistency(T(z), T(nmap), T(cam.position), T(cam.pixel_dirs()), valid)) > 0
    assert float(normal_smoothness(T(nmap), valid)) == 0.0
    noisy = nmap + rng.normal(0, 0.1, nmap.shape)
    assert float(normal_smoothness(T(noisy), valid)) > 0
    assert float(normal_smoothness(T(noisy), torch.zeros(16, 16, dtype=torch.bool))) == 0.0
