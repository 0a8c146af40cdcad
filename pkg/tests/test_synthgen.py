import numpy as np
import pytest

from glasssplat.losses import depth_normal_consistency
from glasssplat.scene import Camera
from glasssplat.synthgen import (
    MAX_PANELS, AnalyticScene, InfeasibleSceneError, Quad, generate_scene, generate_trajectory, invert_transmission,
    oracle_render, split_indices,
)


def test_no_panels_is_opaque():
    sc = generate_scene(0, n_panels=0)
    assert sc.glass() == []
    cams = generate_trajectory(sc, 4, 0, 16, 16)
    assert not oracle_render(sc, cams[0])["mask"].any()


def test_one_panel_visible():
    sc = generate_scene(0, n_panels=1)
    assert len(sc.glass()) == 1
    cams = generate_trajectory(sc, 8, 0, 32, 32)
    assert all(oracle_render(sc, c)["mask"].any() for c in cams)


def test_seeds_differ_and_repeat():
    assert generate_scene(0).digest() != generate_scene(1).digest()
    assert generate_scene(5).digest() == generate_scene(5).digest()
    sc = generate_scene(5)
    cam = generate_trajectory(sc, 3, 5, 16, 16)[1]
    a, b = oracle_render(sc, cam), oracle_render(generate_scene(5), cam)
    for k in a:
        assert np.array_equal(a[k], b[k])


def test_invalid_specs():
    with pytest.raises(InfeasibleSceneError):
        generate_scene(0, n_panels=MAX_PANELS + 1)
    with pytest.raises(InfeasibleSceneError):
        generate_scene(0, room=(1.0, 1.0, 1.0))
    with pytest.raises(InfeasibleSceneError):
        generate_scene(0, n_boxes=0, n_panels=1)
    with pytest.raises(InfeasibleSceneError):
        generate_scene(0, container_size=10.0)
    with pytest.raises(ValueError):
        generate_trajectory(generate_scene(0), 1, 0)


def _wall_scene(albedo, glass=None):
    wall = Quad([0, 2, 0], [3, 0, 0], [0, 0, 3], "diffuse", albedo)
    quads = [wall] + ([glass] if glass else [])
    return AnalyticScene(quads, [], [6, 6, 3])


def test_bare_wall():
    sc = _wall_scene([0.3, 0.5, 0.7])
    cam = Camera.look_at((0, 0, 0), (0, 1, 0), width=8, height=8)
    gt = oracle_render(sc, cam)
    np.testing.assert_allclose(gt["rgb"], np.broadcast_to([0.3, 0.5, 0.7], (8, 8, 3)))
    assert not gt["mask"].any()


def test_perfect_transmission():
    checker = Quad([0, 2, 0], [3, 0, 0], [0, 0, 3], "diffuse", [0.9, 0.2, 0.1], [0.1, 0.3, 0.8], 0.25)
    glass = Quad([0, 1, 0], [0.5, 0, 0], [0, 0, 0.5], "glass", [0, 0, 0], None, 0.0, 1.0, 0.0, 0.0)
    cam = Camera.look_at((0, 0, 0), (0, 1, 0), width=16, height=16)
    with_glass = oracle_render(AnalyticScene([checker, glass], [], [6, 6, 3]), cam)
    bare = oracle_render(AnalyticScene([checker], [], [6, 6, 3]), cam)
    m = with_glass["mask"] > 0
    assert m.any()
    # with f0 = 0 only the grazing Fresnel term remains
    k = with_glass["k_s"][m][:, None]
    np.testing.assert_allclose(k, (1 - np.abs(cam.pixel_dirs()[m] @ [0, 1.0, 0]))[:, None] ** 5, atol=1e-12)
    np.testing.assert_allclose(with_glass["rgb"][m], (1 - k) * bare["rgb"][m] + k * with_glass["l_refl"][m],
                               atol=1e-12)
    np.testing.assert_allclose(with_glass["l_trans"][m], bare["rgb"][m], atol=1e-12)
    # along the panel normal nothing is reflected and the wall shows through unchanged
    axial = Camera.look_at((0, 0, 0), (0, 1, 0), width=1, height=1)
    np.testing.assert_allclose(oracle_render(AnalyticScene([checker, glass], [], [6, 6, 3]), axial)["rgb"],
                               oracle_render(AnalyticScene([checker], [], [6, 6, 3]), axial)["rgb"], atol=1e-15)


def test_fresnel_at_sixty_degrees():
    # glass plane x = 0 seen at 60 degrees from its normal: cos = 0.5, F = 0.04 + 0.96 / 32 = 0.07
    wall = Quad([0, 3, 0], [4, 0, 0], [0, 0, 3], "diffuse", [0.6, 0.6, 0.6])
    side = Quad([-1, 0, 0], [0, 0, 3], [0, 4, 0], "diffuse", [0.2, 0.4, 0.8])
    glass = Quad([0, 0, 0], [0, 1, 0], [0, 0, 1], "glass", [0, 0, 0], None, 0.0, 1.0, 0.0, 0.04)
    sc = AnalyticScene([wall, side, glass], [], [8, 8, 4])
    d = np.array([np.sin(np.radians(30)), np.cos(np.radians(30)), 0.0])
    cam = Camera.look_at(-d, (0, 0, 0), width=1, height=1)
    gt = oracle_render(sc, cam)
    assert gt["mask"][0, 0] == 1
    assert gt["k_s"][0, 0] == pytest.approx(0.07, abs=1e-12)
    np.testing.assert_allclose(gt["l_trans"][0, 0], [0.6, 0.6, 0.6])
    np.testing.assert_allclose(gt["l_refl"][0, 0], [0.2, 0.4, 0.8])
    np.testing.assert_allclose(gt["rgb"][0, 0], 0.93 * 0.6 + 0.07 * np.array([0.2, 0.4, 0.8]), atol=1e-12)


def test_invertibility():
    sc = generate_scene(2)
    bare = sc.without_glass()
    for cam in generate_trajectory(sc, 6, 2, 32, 32):
        gt = oracle_render(sc, cam)
        m = (gt["mask"] > 0) & (gt["k_s"] < 0.5)
        assert m.any()
        err = np.abs(invert_transmission(gt)[m] - oracle_render(bare, cam)["rgb"][m]).max()
        assert err <= 1e-5


def test_trajectory_properties():
    sc = generate_scene(4)
    cams = generate_trajectory(sc, 48, 4, 64, 64)
    fwd = np.array([c.forward for c in cams])
    steps = np.degrees(np.arccos(np.clip(np.sum(fwd[1:] * fwd[:-1], axis=1), -1, 1)))
    pos = np.array([c.position for c in cams])
    tgt = sc.glass_centroid()
    to_c = [(p - tgt) / np.linalg.norm(p - tgt) for p in pos]
    orbit = np.degrees(np.arccos(np.clip([a @ b for a, b in zip(to_c[1:], to_c[:-1])], -1, 1)))
    assert steps.max() < 15 and orbit.max() < 15
    for c in cams:
        px, z = c.project(tgt[None])
        assert z[0] > 0 and 0 <= px[0, 0] < 64 and 0 <= px[0, 1] < 64


def test_split_rule():
    train, test = split_indices(8)
    assert len(train) == 7 and test == [0]
    train, test = split_indices(48)
    assert test == [0, 8, 16, 24, 32, 40] and len(train) == 42


def test_gt_depth_normal_consistent_on_planes():
    import torch
    sc = _wall_scene([0.5, 0.5, 0.5])
    cam = Camera.look_at((0.3, 0, 0.2), (1.0, 2.0, 0.5), width=16, height=16)
    gt = oracle_render(sc, cam)
    T = torch.from_numpy
    valid = torch.from_numpy(gt["depth"] > 0)
    loss = depth_normal_consistency(T(gt["depth"]), T(gt["normal"]), T(cam.position), T(cam.pixel_dirs()), valid)
    assert float(loss) <= 1e-3


def test_gt_invariants():
    sc = generate_scene(7)
    cam = generate_trajectory(sc, 4, 7, 32, 32)[2]
    gt = oracle_render(sc, cam)
    n = np.linalg.norm(gt["normal"], axis=-1)
    assert np.allclose(n[gt["depth"] > 0], 1)
    assert set(np.unique(gt["mask"])) <= {0.0, 1.0}
    assert np.all(gt["albedo"][gt["mask"] > 0] == 0)
    assert AnalyticScene.from_dict(sc.to_dict()).digest() == sc.digest()
