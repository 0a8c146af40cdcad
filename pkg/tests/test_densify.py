import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_set
from glasssplat.densify import SPLIT_SHRINK, densify_and_prune, split_children
from glasssplat.scene import S_MIN, GaussianSet

ARGS = dict(grad_threshold=1e-3, percent_dense=0.01, min_opacity=0.005, max_world_scale=0.1)


def _set(n, scale, opacity_logit=2.0):
    gs = random_set(np.random.default_rng(0), n, interface=True)
    gs.scale[:] = scale
    gs.opacity_logit[:] = opacity_logit
    return gs


def test_nothing_over_threshold_is_unchanged():
    gs = _set(5, 0.5)
    out, origin = densify_and_prune(gs, np.zeros(5), 100.0, np.random.default_rng(0), **ARGS)
    for k, v in gs.arrays().items():
        np.testing.assert_array_equal(out.arrays()[k], v)
    np.testing.assert_array_equal(origin, np.arange(5))


def test_faint_primitive_pruned():
    gs = _set(3, 0.5)
    gs.opacity_logit[1] = np.log(1e-4 / (1 - 1e-4))
    out, origin = densify_and_prune(gs, np.zeros(3), 100.0, np.random.default_rng(0), **ARGS)
    assert len(out) == 2
    np.testing.assert_array_equal(origin, [0, 2])


def test_huge_primitive_pruned():
    gs = _set(3, 0.5)
    gs.scale[2] = [20.0, 1.0]
    out, origin = densify_and_prune(gs, np.zeros(3), 100.0, np.random.default_rng(0), **ARGS)
    np.testing.assert_array_equal(origin, [0, 1])


def test_split_example():
    gs = _set(1, 0.0)
    gs.scale[0] = [0.8, 0.1]
    gs.rot[0] = [1.0, 0, 0, 0]
    gs.mu[0] = 0
    out, origin = densify_and_prune(gs, np.array([1.0]), 10.0, np.random.default_rng(0), **ARGS)
    assert len(out) == 2
    np.testing.assert_array_equal(origin, [-1, -1])
    np.testing.assert_allclose(out.scale, [[0.5, 0.0625], [0.5, 0.0625]])
    # offsets lie along the major tangent axis t_u = x
    assert np.all(out.mu[:, 1:] == 0) and np.any(out.mu[:, 0] != 0)


def test_clone_small_primitive():
    gs = _set(2, 0.05)
    out, origin = densify_and_prune(gs, np.array([1.0, 0.0]), 100.0, np.random.default_rng(0), **ARGS)
    assert len(out) == 3
    np.testing.assert_array_equal(origin, [0, 1, -1])
    np.testing.assert_array_equal(out.mu[2], gs.mu[0])


def test_cap_limits_growth():
    gs = _set(10, 0.05)
    out, _ = densify_and_prune(gs, np.linspace(1, 2, 10), 100.0, np.random.default_rng(0), max_prims=13, **ARGS)
    assert len(out) == 13


def test_split_children_empty():
    gs = _set(2, 0.5)
    assert len(split_children(gs, np.zeros(0, np.int64), np.random.default_rng(0))) == 0
    assert SPLIT_SHRINK == 1.6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.booleans())
def test_membership_and_scale_floor(seed, interface):
    rng = np.random.default_rng(seed)
    gs = random_set(rng, 20, scale=(S_MIN, 0.3), interface=interface)
    gs.scale[:3] = S_MIN
    grads = rng.uniform(0, 2e-3, 20)
    out, origin = densify_and_prune(gs, grads, 5.0, rng, **ARGS)
    assert isinstance(out, GaussianSet)
    assert out.is_interface == gs.is_interface
    assert out.scale.min() >= S_MIN
    assert len(origin) == len(out)
    kept = origin[origin >= 0]
    assert len(np.unique(kept)) == len(kept)
