"""Staged optimization of a decomposed scene against posed views and priors."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .dataset import PriorBundle, SceneData, View, make_priors
from .densify import densify_and_prune
from .io import save_scene
from .losses import (
    LossWeights, bootstrap_mask, depth_normal_consistency, masked_normal_loss, normal_smoothness,
    photometric_loss, si_depth_loss, transparency_loss,
)
from .scene import S_MIN, DecomposedScene, GaussianSet
from .splat import DTYPE
from .transport import SceneBvhs, render_t

log = logging.getLogger(__name__)

SETS = ("intr", "trans", "refl")
LOG_COLUMNS = ("iter", "l1", "ssim", "depth", "normal", "trans", "nc", "total")
MAX_FAILURES = 5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-15


class NumericalFailure(RuntimeError):
    pass


@dataclass
class TrainConfig:
    iterations: int = 3000
    warmup_frac: float = 1 / 12
    freeze_frac: float = 1 / 3
    mask_start_frac: float = 1 / 6
    # learning rates; positions are scaled by the scene radius
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh_dc: float = 2.5e-3
    lr_sh_rest: float = 1.25e-4
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_material: float = 0.05
    densify_interval: int = 100
    densify_grad: float = 2e-3
    percent_dense: float = 0.01
    prune_opacity: float = 0.005
    prune_world_scale: float = 0.5
    max_prims: int = 3000
    tau_d: float = 0.01
    gamma_a: float = 0.05
    tau_n: float = 0.3
    mask_refresh: int = 100
    sigma_e: float = 0.1
    checkpoint_every: int = 500
    prior_depth_noise: float = 0.0
    prior_normal_noise_deg: float = 0.0
    use_trans: bool = True
    use_refl: bool = True
    loss_trans: bool = True
    loss_depth: bool = True
    loss_normal: bool = True
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 <= self.warmup_frac < 1 - self.freeze_frac <= 1:
            raise ValueError("need 0 <= warmup_frac < 1 - freeze_frac <= 1")
        if not 0 <= self.mask_start_frac <= 1:
            raise ValueError("mask_start_frac must lie in [0, 1]")
        positive = ("tau_d", "gamma_a", "tau_n", "densify_grad", "percent_dense", "prune_opacity",
                    "prune_world_scale", "sigma_e", "densify_interval", "mask_refresh", "max_prims")
        for k in positive:
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            wk = {f.name for f in fields(LossWeights)}
            bad = set(d["weights"]) - wk
            if bad:
                raise ValueError(f"unknown loss weight keys: {sorted(bad)}")
        return cls(**d)

    def stage(self, it: int) -> str:
        n = self.iterations
        if it < self.warmup_frac * n:
            return "warmup"
        if it >= (1.0 - self.freeze_frac) * n:
            return "freeze"
        return "joint"

    def trainable_sets(self, it: int) -> tuple[str, ...]:
        stage = self.stage(it)
        sets = {"warmup": ("intr",), "joint": SETS, "freeze": ("trans", "refl")}[stage]
        return tuple(s for s in sets if self.set_enabled(s))

    def set_enabled(self, name: str) -> bool:
        return {"intr": True, "trans": self.use_trans, "refl": self.use_refl}[name]

    def position_lr(self, it: int, radius: float) -> float:
        frac = min(max(it / max(self.iterations, 1), 0.0), 1.0)
        lr = math.exp((1 - frac) * math.log(self.lr_position) + frac * math.log(self.lr_position_final))
        return lr * radius


# optimizer parameter groups; scales are optimized in log space
GROUPS = ("mu", "rot", "log_scale", "opacity_logit", "sh_dc", "sh_rest", "trans_logit", "spec_logit")


def group_arrays(gs: GaussianSet) -> dict[str, np.ndarray]:
    out = {
        "mu": gs.mu, "rot": gs.rot, "log_scale": np.log(gs.scale), "opacity_logit": gs.opacity_logit,
        "sh_dc": gs.sh[:, :1], "sh_rest": gs.sh[:, 1:],
    }
    if gs.is_interface:
        out["trans_logit"] = gs.trans_logit
        out["spec_logit"] = gs.spec_logit
    return out


def leaf_tensors(gs: GaussianSet, requires_grad: bool) -> dict[str, torch.Tensor]:
    out = {}
    for k, v in group_arrays(gs).items():
        t = torch.tensor(v, dtype=DTYPE)
        t.requires_grad_(requires_grad)
        out[k] = t
    return out


def render_params(leaves: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Map optimizer leaves to the renderer's parameter dict."""
    p = {
        "mu": leaves["mu"],
        "rot": leaves["rot"],
        "scale": torch.exp(leaves["log_scale"]),
        "opacity_logit": leaves["opacity_logit"],
        "sh": torch.cat([leaves["sh_dc"], leaves["sh_rest"]], dim=1),
    }
    if "trans_logit" in leaves:
        p["trans_logit"] = leaves["trans_logit"]
        p["spec_logit"] = leaves["spec_logit"]
    return p


@dataclass
class TrainState:
    iteration: int = 0
    radius: float = 1.0
    moments: dict = field(default_factory=dict)     # (set, group) -> [m, v]
    steps: dict = field(default_factory=dict)       # (set, group) -> int
    grad_accum: dict = field(default_factory=dict)  # set -> (N,)
    grad_count: dict = field(default_factory=dict)  # set -> (N,)
    lr_scale: float = 1.0
    failures: int = 0
    mask_cache: dict = field(default_factory=dict)  # view index -> (iteration, mask)
    rng: np.random.Generator | None = None
    stage: str = "warmup"

    @classmethod
    def create(cls, scene: DecomposedScene, cfg: TrainConfig) -> "TrainState":
        st = cls(radius=scene.extent()[1], rng=np.random.default_rng(cfg.seed))
        for name, gs in scene.sets().items():
            st.reset_stats(name, len(gs))
        return st

    def reset_stats(self, name: str, n: int):
        self.grad_accum[name] = np.zeros(n)
        self.grad_count[name] = np.zeros(n)


@dataclass
class StepResult:
    losses: dict
    accepted: bool
    stage: str


class RenderContext:
    """Per-view tensors reused across steps."""

    def __init__(self, view: View, priors: PriorBundle):
        cam = view.camera
        self.view = view
        self.priors = priors
        self.H, self.W = cam.height, cam.width
        self.gt = torch.from_numpy(np.ascontiguousarray(view.rgb, dtype=np.float64))
        self.dirs = torch.from_numpy(cam.pixel_dirs())
        self.origin = torch.from_numpy(np.asarray(cam.position, dtype=np.float64))
        self.zhat = torch.from_numpy(np.ascontiguousarray(priors.depth, dtype=np.float64))
        self.nhat = torch.from_numpy(np.ascontiguousarray(priors.normal, dtype=np.float64))


def compute_losses(scene: DecomposedScene, leaves: dict, ctx: RenderContext, cfg: TrainConfig, state: TrainState,
                   bvhs: SceneBvhs | None = None, cache: dict | None = None, m_trans: np.ndarray | None = None):
    """Forward render plus every loss term. Returns (total, terms, render output, m_trans)."""
    w = cfg.weights
    params = {k: render_params(v) for k, v in leaves.items()}
    out = render_t(scene, params, ctx.view.camera, bvhs, cache=cache)
    H, W = ctx.H, ctx.W
    img = out["l_o"].reshape(H, W, 3)
    zero = img.sum() * 0.0
    photo, l1, dssim = photometric_loss(img, ctx.gt, w)
    z = out["z"].reshape(H, W)
    n = out["n"].reshape(H, W, 3)
    acc = out["acc_alpha"].reshape(H, W).detach()
    valid = (ctx.zhat > 0) & (acc > 0.5)

    depth_l = zero
    if cfg.loss_depth and w.depth > 0 and int(valid.sum()) >= 2:
        depth_l, _ = si_depth_loss(z, ctx.zhat, valid)
    normal_l = zero
    if cfg.loss_normal and w.normal > 0:
        use_mask = state.iteration >= cfg.mask_start_frac * cfg.iterations
        normal_l = masked_normal_loss(n, ctx.nhat, valid, use_mask, cfg.tau_n)

    trans_l = zero
    if m_trans is None:
        m_trans = transparency_target(out, ctx, cfg, state.radius)
    if cfg.loss_trans and w.trans > 0:
        trans_l = transparency_loss(out["t"].reshape(H, W), torch.from_numpy(m_trans), 1.0)

    nc_l = zero
    smooth_l = zero
    if w.nc > 0:
        nc_l = depth_normal_consistency(z, n, ctx.origin, ctx.dirs, valid, ctx.gt, cfg.sigma_e)
    if w.smooth > 0:
        smooth_l = normal_smoothness(n, valid, ctx.gt, cfg.sigma_e)

    total = (photo + w.depth * depth_l + w.normal * normal_l + w.trans * trans_l
             + w.nc * nc_l + w.smooth * smooth_l)
    def f(x):
        return float(x.detach())

    terms = {
        "l1": f(l1), "ssim": f(dssim), "depth": f(depth_l), "normal": f(normal_l),
        "trans": f(trans_l), "nc": f(nc_l) + f(smooth_l), "total": f(total),
    }
    return total, terms, out, m_trans


def transparency_target(out: dict, ctx: RenderContext, cfg: TrainConfig, radius: float) -> np.ndarray:
    """Bootstrapped transparency mask from the current render (no gradients)."""
    H, W = ctx.H, ctx.W
    acc = out["acc_alpha"].detach().numpy()
    ta = out["trans_alpha"].detach().numpy()
    # compare alpha-normalized depths so partial coverage does not fake a separation
    z_i = out["z"].detach().numpy() / np.maximum(acc, 1e-12)
    z_t = out["z_trans"].detach().numpy() / np.maximum(ta, 1e-12)
    m = bootstrap_mask(z_i, z_t, ctx.priors.albedo.reshape(-1, 3), radius, cfg.tau_d, cfg.gamma_a, trans_alpha=ta)
    return m.reshape(H, W)


def _lr(cfg: TrainConfig, group: str, it: int, radius: float) -> float:
    return {
        "mu": cfg.position_lr(it, radius),
        "rot": cfg.lr_rotation,
        "log_scale": cfg.lr_scale,
        "opacity_logit": cfg.lr_opacity,
        "sh_dc": cfg.lr_sh_dc,
        "sh_rest": cfg.lr_sh_rest,
        "trans_logit": cfg.lr_material,
        "spec_logit": cfg.lr_material,
    }[group]


def _write_groups(gs: GaussianSet, vals: dict[str, np.ndarray]):
    gs.mu = vals["mu"]
    gs.rot = vals["rot"]
    gs.scale = np.maximum(np.exp(vals["log_scale"]), S_MIN)
    gs.opacity_logit = vals["opacity_logit"]
    gs.sh = np.concatenate([vals["sh_dc"], vals["sh_rest"]], axis=1)
    if gs.is_interface:
        gs.trans_logit = vals["trans_logit"]
        gs.spec_logit = vals["spec_logit"]


def adam_update(state: TrainState, key, value: np.ndarray, grad: np.ndarray, lr: float):
    """Returns (new value, (m, v, step)) without touching ``state``."""
    b1, b2 = ADAM_BETAS
    m, v = state.moments.get(key, (None, None))
    if m is None or m.shape != value.shape:
        m, v = np.zeros_like(value), np.zeros_like(value)
    step = state.steps.get(key, 0) + 1
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    mhat = m / (1 - b1 ** step)
    vhat = v / (1 - b2 ** step)
    return value - lr * mhat / (np.sqrt(vhat) + ADAM_EPS), (m, v, step)


def train_step(scene: DecomposedScene, state: TrainState, ctx: RenderContext, cfg: TrainConfig,
               bvhs: SceneBvhs | None = None) -> StepResult:
    """One optimization step on one view; updates ``scene`` and ``state`` in place."""
    it = state.iteration
    state.stage = cfg.stage(it)
    trainable = cfg.trainable_sets(it)
    leaves = {name: leaf_tensors(gs, name in trainable) for name, gs in scene.sets().items()}

    vi = ctx.view.index
    cached = state.mask_cache.get(vi)
    m_trans = None
    if cached is not None and it - cached[0] < cfg.mask_refresh:
        m_trans = cached[1]
    total, terms, out, m_new = compute_losses(scene, leaves, ctx, cfg, state, bvhs, m_trans=m_trans)
    if m_trans is None:
        state.mask_cache[vi] = (it, m_new)

    if total.requires_grad:
        total.backward()
    grads = {
        name: {k: (t.grad.numpy() if t.grad is not None else np.zeros(tuple(t.shape))) for k, t in leaves[name].items()}
        for name in trainable
    }
    finite = math.isfinite(terms["total"]) and all(np.isfinite(g).all() for gd in grads.values() for g in gd.values())
    if not finite:
        state.failures += 1
        state.lr_scale *= 0.5
        log.warning("non-finite loss at iteration %d; step rejected, lr scale now %g", it, state.lr_scale)
        if state.failures >= MAX_FAILURES:
            raise NumericalFailure(f"{state.failures} non-finite steps")
        return StepResult(terms, False, state.stage)

    updated = {}
    moments = {}
    for name in trainable:
        gs = getattr(scene, name)
        vals = group_arrays(gs)
        new = {}
        for k, v in vals.items():
            g = grads[name][k]
            if np.any(g != 0):
                lr = _lr(cfg, k, it, state.radius) * state.lr_scale
                new[k], moments[(name, k)] = adam_update(state, (name, k), v, g, lr)
            else:
                new[k] = v.copy()
        changed = np.any(new["rot"] != vals["rot"], axis=1)
        if changed.any():
            q = new["rot"][changed]
            new["rot"][changed] = q / np.linalg.norm(q, axis=1, keepdims=True)
        updated[name] = new
    if not all(np.isfinite(a).all() for new in updated.values() for a in new.values()):
        state.failures += 1
        state.lr_scale *= 0.5
        log.warning("non-finite update at iteration %d; step rejected", it)
        if state.failures >= MAX_FAILURES:
            raise NumericalFailure(f"{state.failures} non-finite steps")
        return StepResult(terms, False, state.stage)
    for key, (m, v, step) in moments.items():
        state.moments[key] = [m, v]
        state.steps[key] = step
    for name, new in updated.items():
        _write_groups(getattr(scene, name), new)
        hits = out["hits"][name]
        gnorm = np.linalg.norm(grads[name]["mu"], axis=1)
        seen = hits > 0
        state.grad_accum[name][seen] += gnorm[seen]
        state.grad_count[name][seen] += 1
    state.iteration += 1
    return StepResult(terms, True, state.stage)


def densify_step(scene: DecomposedScene, state: TrainState, cfg: TrainConfig):
    for name in SETS:
        if not cfg.set_enabled(name):
            continue
        gs = getattr(scene, name)
        avg = state.grad_accum[name] / np.maximum(state.grad_count[name], 1)
        new, origin = densify_and_prune(
            gs, avg, state.radius, state.rng, cfg.densify_grad, cfg.percent_dense, cfg.prune_opacity,
            cfg.prune_world_scale, cfg.max_prims,
        )
        setattr(scene, name, new)
        for k in GROUPS:
            key = (name, k)
            if key not in state.moments:
                continue
            m, v = state.moments[key]
            mm = np.zeros((len(new),) + m.shape[1:])
            vv = np.zeros_like(mm)
            old = origin >= 0
            mm[old] = m[origin[old]]
            vv[old] = v[origin[old]]
            state.moments[key] = [mm, vv]
        state.reset_stats(name, len(new))
        log.info("densify %s: %d -> %d", name, len(gs), len(new))


def strip_disabled(scene: DecomposedScene, cfg: TrainConfig) -> DecomposedScene:
    scene = scene.copy()
    if not cfg.use_trans:
        scene.trans = GaussianSet.empty(scene.sh_degree)
    if not cfg.use_refl:
        scene.refl = GaussianSet.empty(scene.sh_degree)
    return scene


def make_contexts(data: SceneData, cfg: TrainConfig) -> list[RenderContext]:
    noisy = cfg.prior_depth_noise > 0 or cfg.prior_normal_noise_deg > 0
    seeds = np.random.SeedSequence([cfg.seed, 1]).spawn(len(data.views))
    ctxs = []
    for vi in data.train:
        v = data.views[vi]
        rng = np.random.default_rng(seeds[vi]) if noisy else None
        pri = make_priors(v, rng, cfg.prior_depth_noise, cfg.prior_normal_noise_deg)
        ctxs.append(RenderContext(v, pri))
    return ctxs


def train(scene: DecomposedScene, data: SceneData, cfg: TrainConfig, out_dir=None, progress=None):
    """Run the full schedule. Returns (final scene, per-iteration loss rows)."""
    scene = strip_disabled(scene, cfg)
    state = TrainState.create(scene, cfg)
    ctxs = make_contexts(data, cfg)
    if not ctxs:
        raise ValueError("dataset has no training views")
    out_dir = Path(out_dir) if out_dir is not None else None
    rows = []
    writer = None
    fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "train_log.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
    try:
        order: list[int] = []
        last_good = scene.copy()
        while state.iteration < cfg.iterations:
            if not order:
                order = list(state.rng.permutation(len(ctxs)))
            ctx = ctxs[order.pop()]
            it = state.iteration
            try:
                res = train_step(scene, state, ctx, cfg)
            except NumericalFailure:
                if out_dir is not None:
                    save_scene(last_good, out_dir / "last_good.scene.json", it)
                raise
            if not res.accepted:
                continue
            row = {"iter": it, **{k: res.losses[k] for k in LOG_COLUMNS[1:]}}
            rows.append(row)
            if writer is not None:
                writer.writerow([it] + [f"{row[k]:.8g}" for k in LOG_COLUMNS[1:]])
            nxt = state.iteration
            if cfg.stage(it) == "joint" and nxt % cfg.densify_interval == 0 and cfg.stage(nxt) == "joint":
                densify_step(scene, state, cfg)
            if out_dir is not None and cfg.checkpoint_every > 0 and nxt % cfg.checkpoint_every == 0:
                save_scene(scene, out_dir / f"ckpt_{nxt:06d}.scene.json", nxt)
                last_good = scene.copy()
            if progress is not None:
                progress(it, res)
    finally:
        if fh is not None:
            fh.close()
    return scene, rows
