"""Adaptive densification (clone / split) and pruning of primitive sets."""
from __future__ import annotations

import numpy as np

from .scene import S_MIN, GaussianSet

SPLIT_SHRINK = 1.6


def split_children(gs: GaussianSet, idx: np.ndarray, rng: np.random.Generator) -> GaussianSet:
    """Two children per primitive, shrunk by 1.6 and offset along the major tangent axis."""
    if len(idx) == 0:
        return gs.take(np.zeros(0, np.int64))
    rep = np.repeat(idx, 2)
    kids = gs.take(rep)
    fr = gs.frames()[rep]
    major = np.argmax(gs.scale[rep], axis=1)
    axis = fr[np.arange(len(rep)), :, major]
    sigma = gs.scale[rep, major]
    kids.mu = kids.mu + (rng.standard_normal(len(rep)) * sigma)[:, None] * axis
    kids.scale = np.maximum(kids.scale / SPLIT_SHRINK, S_MIN)
    return kids


def densify_and_prune(gs: GaussianSet, grad_avg: np.ndarray, radius: float, rng: np.random.Generator,
                      grad_threshold: float, percent_dense: float, min_opacity: float, max_world_scale: float,
                      max_prims: int | None = None):
    """Grow high-gradient primitives and drop faint or huge ones.

    ``max_world_scale`` and ``percent_dense`` are fractions of ``radius``.
    Returns the new set and, for each new row, the index of the old row it
    continues (-1 for new primitives).
    """
    n = len(gs)
    if n == 0:
        return gs.copy(), np.zeros(0, np.int64)
    big = gs.scale.max(axis=1) > percent_dense * radius
    hot = grad_avg >= grad_threshold
    if max_prims is not None:
        # each clone adds one primitive, each split adds one net
        room = max(max_prims - n, 0)
        cand = np.nonzero(hot)[0]
        if len(cand) > room:
            keep = cand[np.argsort(-grad_avg[cand], kind="stable")[:room]]
            hot = np.zeros(n, bool)
            hot[keep] = True
    clone = np.nonzero(hot & ~big)[0]
    split = np.nonzero(hot & big)[0]

    stay = np.ones(n, bool)
    stay[split] = False
    parts = [gs.take(np.nonzero(stay)[0]), gs.take(clone), split_children(gs, split, rng)]
    origin = np.concatenate([np.nonzero(stay)[0], np.full(len(clone) + 2 * len(split), -1)])
    out = parts[0]
    for p in parts[1:]:
        out = out.concat(p)

    alive = (out.opacity() >= min_opacity) & (out.scale.max(axis=1) <= max_world_scale * radius)
    idx = np.nonzero(alive)[0]
    return out.take(idx), origin[idx]
