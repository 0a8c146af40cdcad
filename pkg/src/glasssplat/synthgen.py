"""Synthetic glass-room generator and first-order analytic ground-truth renderer.

Rooms are axis-aligned boxes (z up) furnished with opaque boxes; thin glass
panels enclose the first box. Diffuse surfaces shade as albedo times a
constant irradiance (no shadows). Glass first-hits get one straight
transmission continuation and one mirror reflection, each terminating on
diffuse geometry.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .losses import luma
from .scene import Camera

GLASS_EPS = 1e-6
MAX_PANELS = 5


class InfeasibleSceneError(ValueError):
    pass


@dataclass
class Quad:
    """Rectangle ``center + a*axis_u + b*axis_v`` for a, b in [-1, 1].

    ``axis_u``/``axis_v`` carry the half extents. Diffuse quads are textured
    with a checker of ``cell`` size in scene units (``cell <= 0`` is solid).
    """

    center: list
    axis_u: list
    axis_v: list
    material: str = "diffuse"
    albedo: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    albedo2: list | None = None
    cell: float = 0.0
    t0: float = 1.0
    s0: float = 0.0
    f0: float = 0.04

    def normal(self) -> np.ndarray:
        n = np.cross(self.axis_u, self.axis_v)
        return n / np.linalg.norm(n)


@dataclass
class AnalyticScene:
    quads: list
    boxes: list
    room: list
    irradiance: float = 1.0
    environment: list = field(default_factory=lambda: [0.0, 0.0, 0.0])

    def glass(self) -> list:
        return [q for q in self.quads if q.material == "glass"]

    def glass_centroid(self) -> np.ndarray:
        g = self.glass()
        if not g:
            b = self.boxes[0] if self.boxes else {"lo": [0, 0, 0], "hi": [0, 0, 1]}
            return 0.5 * (np.array(b["lo"]) + np.array(b["hi"]))
        return np.mean([q.center for q in g], axis=0)

    def without_glass(self) -> "AnalyticScene":
        return AnalyticScene([q for q in self.quads if q.material != "glass"], self.boxes, self.room,
                             self.irradiance, self.environment)

    def to_dict(self) -> dict:
        return {
            "room": list(self.room), "irradiance": self.irradiance, "environment": list(self.environment),
            "boxes": self.boxes, "quads": [asdict(q) for q in self.quads],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticScene":
        return cls([Quad(**q) for q in d["quads"]], d["boxes"], d["room"], d["irradiance"], d["environment"])

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def _box_quads(lo, hi, albedo, albedo2, cell):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    ex, ey, ez = np.array([h[0], 0, 0]), np.array([0, h[1], 0]), np.array([0, 0, h[2]])
    faces = [
        (c + ex, ey, ez), (c - ex, ez, ey),
        (c + ey, ez, ex), (c - ey, ex, ez),
        (c + ez, ex, ey), (c - ez, ey, ex),
    ]
    return [Quad(list(p), list(u), list(v), "diffuse", list(albedo), albedo2, cell) for p, u, v in faces]


def _pick_color(rng, min_luma=0.2):
    while True:
        c = rng.uniform(0.15, 0.9, 3)
        if luma(c) >= min_luma:
            return [float(x) for x in c]


def generate_scene(seed: int, room=(6.0, 6.0, 3.0), n_boxes: int = 3, n_panels: int = 1,
                   container_size: float | None = None, glass=(1.0, 0.05, 0.04)) -> AnalyticScene:
    """Random furnished room; glass panels enclose box 0 (front, right, back, left, top).

    ``glass`` is (t0, s0, f0). Raises InfeasibleSceneError when the request
    cannot be realised in the room.
    """
    rng = np.random.default_rng(seed)
    W, D, H = (float(x) for x in room)
    if min(W, D, H) <= 0:
        raise InfeasibleSceneError("room dimensions must be positive")
    if n_panels < 0 or n_panels > MAX_PANELS:
        raise InfeasibleSceneError(f"between 0 and {MAX_PANELS} panels are supported, got {n_panels}")
    if n_panels > 0 and n_boxes < 1:
        raise InfeasibleSceneError("glass panels need at least one box to enclose")
    margin = 0.15
    quads = []
    wall_cells = [0.5, 0.6, 0.75]
    hx, hy = W / 2, D / 2
    # inward-facing room shell
    shell = [
        ([0, 0, 0], [hx, 0, 0], [0, hy, 0]),
        ([0, 0, H], [0, hy, 0], [hx, 0, 0]),
        ([-hx, 0, H / 2], [0, hy, 0], [0, 0, H / 2]),
        ([hx, 0, H / 2], [0, 0, H / 2], [0, hy, 0]),
        ([0, -hy, H / 2], [0, 0, H / 2], [hx, 0, 0]),
        ([0, hy, H / 2], [hx, 0, 0], [0, 0, H / 2]),
    ]
    for c, u, v in shell:
        quads.append(Quad(c, u, v, "diffuse", _pick_color(rng), _pick_color(rng), float(rng.choice(wall_cells))))

    boxes = []
    clear = margin + 0.3
    for i in range(n_boxes):
        for _ in range(200):
            if i == 0:
                if container_size is not None:
                    size = np.array([container_size - 2 * margin] * 2 + [min(container_size, H) - margin])
                else:
                    size = np.array([rng.uniform(0.7, 1.0), rng.uniform(0.6, 0.9), rng.uniform(0.6, 1.0)])
                if np.any(size <= 0):
                    raise InfeasibleSceneError("container too small")
                span = np.array([hx, hy]) - size[:2] / 2 - clear
                if np.any(span <= 0) or size[2] + margin >= H:
                    raise InfeasibleSceneError("container does not fit inside the room")
                xy = rng.uniform([-min(span[0], 0.5), 0.0], [min(span[0], 0.5), min(span[1], 0.6)])
            else:
                # furniture stays behind the container so the camera arc is never blocked
                size = np.array([rng.uniform(0.4, 0.8), rng.uniform(0.4, 0.8), rng.uniform(0.4, 1.0)])
                c0 = 0.5 * (np.array(boxes[0]["lo"]) + np.array(boxes[0]["hi"]))
                ylo = c0[1]
                yhi = hy - size[1] / 2 - clear
                xhi = hx - size[0] / 2 - clear
                if yhi <= ylo or xhi <= 0:
                    raise InfeasibleSceneError("room too small for the requested boxes")
                xy = rng.uniform([-xhi, ylo], [xhi, yhi])
            lo = np.array([xy[0] - size[0] / 2, xy[1] - size[1] / 2, 0.0])
            hi = lo + size
            pad = 2 * margin + 0.05
            if all(np.any(lo[:2] > np.array(b["hi"][:2]) + pad) or np.any(hi[:2] < np.array(b["lo"][:2]) - pad)
                   for b in boxes):
                break
        else:
            raise InfeasibleSceneError("could not place boxes without overlap")
        albedo = _pick_color(rng)
        albedo2 = _pick_color(rng) if rng.uniform() < 0.5 else None
        cell = 0.2 if albedo2 is not None else 0.0
        boxes.append({"lo": lo.tolist(), "hi": hi.tolist(), "albedo": albedo, "albedo2": albedo2, "cell": cell})
        quads.extend(_box_quads(lo, hi, albedo, albedo2, cell))

    if n_panels:
        t0, s0, f0 = glass
        lo, hi = np.array(boxes[0]["lo"]), np.array(boxes[0]["hi"])
        glo = lo - [margin, margin, 0.0]
        ghi = hi + [margin, margin, margin]
        c = 0.5 * (glo + ghi)
        h = 0.5 * (ghi - glo)
        ex, ey, ez = np.array([h[0], 0, 0]), np.array([0, h[1], 0]), np.array([0, 0, h[2]])
        sides = [
            (c - ey, ex, ez), (c + ex, ey, ez), (c + ey, ex, ez), (c - ex, ey, ez), (c + ez, ex, ey),
        ]
        for p, u, v in sides[:n_panels]:
            quads.append(Quad(list(p), list(u), list(v), "glass", [0.0, 0.0, 0.0], None, 0.0, t0, s0, f0))
    return AnalyticScene(quads, boxes, [W, D, H])


# ----------------------------------------------------------------- rendering

def _quad_arrays(quads):
    c = np.array([q.center for q in quads], float)
    u = np.array([q.axis_u for q in quads], float)
    v = np.array([q.axis_v for q in quads], float)
    n = np.cross(u, v)
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return c, u, v, n


def intersect_quads(quads, origins, dirs, t_min=1e-9):
    """Closest hit per ray: (t, quad index or -1, local a, local b)."""
    R = origins.shape[0]
    best_t = np.full(R, np.inf)
    best_q = np.full(R, -1, np.int64)
    best_a = np.zeros(R)
    best_b = np.zeros(R)
    if not quads:
        return best_t, best_q, best_a, best_b
    c, u, v, n = _quad_arrays(quads)
    for i in range(len(quads)):
        den = dirs @ n[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((c[i] - origins) @ n[i]) / den
        p = origins + t[:, None] * dirs - c[i]
        a = (p @ u[i]) / (u[i] @ u[i])
        b = (p @ v[i]) / (v[i] @ v[i])
        ok = (np.abs(den) > 1e-12) & (t > t_min) & (np.abs(a) <= 1) & (np.abs(b) <= 1) & (t < best_t)
        best_t[ok], best_q[ok], best_a[ok], best_b[ok] = t[ok], i, a[ok], b[ok]
    return best_t, best_q, best_a, best_b


def _albedo_at(quads, qi, a, b):
    out = np.zeros((qi.size, 3))
    for i in np.unique(qi[qi >= 0]):
        q = quads[i]
        sel = qi == i
        col = np.broadcast_to(np.asarray(q.albedo, float), (sel.sum(), 3)).copy()
        if q.albedo2 is not None and q.cell > 0:
            lu = np.linalg.norm(q.axis_u)
            lv = np.linalg.norm(q.axis_v)
            cu = np.floor((a[sel] + 1) * lu / q.cell).astype(np.int64)
            cv = np.floor((b[sel] + 1) * lv / q.cell).astype(np.int64)
            odd = (cu + cv) % 2 == 1
            col[odd] = q.albedo2
        out[sel] = col
    return out


def shade_diffuse(scene: AnalyticScene, origins, dirs, t_min=1e-6):
    """Radiance of rays that ignore glass and stop at the first diffuse surface."""
    diffuse = [q for q in scene.quads if q.material == "diffuse"]
    t, qi, a, b = intersect_quads(diffuse, origins, dirs, t_min)
    rad = _albedo_at(diffuse, qi, a, b) * scene.irradiance
    rad[qi < 0] = scene.environment
    return rad, t


def oracle_render(scene: AnalyticScene, cam: Camera) -> dict[str, np.ndarray]:
    """Ground-truth view: rgb, depth, normal, albedo, mask and the transport layers."""
    H, W = cam.height, cam.width
    d = cam.pixel_dirs().reshape(-1, 3)
    o = np.broadcast_to(cam.position, d.shape).copy()
    quads = scene.quads
    t, qi, a, b = intersect_quads(quads, o, d)
    hit = qi >= 0
    _, _, _, nq = _quad_arrays(quads)
    normal = np.zeros_like(d)
    normal[hit] = nq[qi[hit]]
    flip = np.sum(normal * d, axis=1) > 0
    normal[flip] *= -1
    depth = np.where(hit, t, 0.0)
    is_glass = np.zeros(d.shape[0], bool)
    for i, q in enumerate(quads):
        if q.material == "glass":
            is_glass |= qi == i
    albedo = _albedo_at(quads, qi, a, b)
    albedo[is_glass] = 0.0
    l_intr = albedo * scene.irradiance
    l_intr[~hit] = scene.environment

    rgb = l_intr.copy()
    l_trans = np.zeros_like(d)
    l_refl = np.zeros_like(d)
    k_s = np.zeros(d.shape[0])
    t0 = np.zeros(d.shape[0])
    if is_glass.any():
        g = np.nonzero(is_glass)[0]
        x = o[g] + t[g, None] * d[g]
        wo = -d[g]
        n = normal[g]
        cos = np.maximum(0.0, np.sum(wo * n, axis=1))
        f0 = np.array([quads[i].f0 for i in qi[g]])
        s0 = np.array([quads[i].s0 for i in qi[g]])
        tt = np.array([quads[i].t0 for i in qi[g]])
        F = f0 + (1 - f0) * (1 - cos) ** 5
        k = s0 + (1 - s0) * F
        wr = 2 * np.sum(n * wo, axis=1, keepdims=True) * n - wo
        lt, _ = shade_diffuse(scene, x, d[g], GLASS_EPS)
        lr, _ = shade_diffuse(scene, x, wr, GLASS_EPS)
        kk = k[:, None]
        opaque = (1 - kk) * l_intr[g] + kk * lr
        transparent = (1 - kk) * lt + kk * lr
        rgb[g] = (1 - tt[:, None]) * opaque + tt[:, None] * transparent
        l_trans[g], l_refl[g], k_s[g], t0[g] = lt, lr, k, tt

    def img(x, c=None):
        return x.reshape(H, W) if c is None else x.reshape(H, W, c)

    return {
        "rgb": img(rgb, 3), "depth": img(depth), "normal": img(normal, 3), "albedo": img(albedo, 3),
        "mask": img(is_glass.astype(np.float64)), "l_intr": img(l_intr, 3), "l_trans": img(l_trans, 3),
        "l_refl": img(l_refl, 3), "k_s": img(k_s), "t0": img(t0),
    }


def invert_transmission(gt: dict) -> np.ndarray:
    """Recover the transmitted radiance at glass pixels from the final colour.

    Inverts L = (1-k)[(1-t0) L_intr + t0 L_trans] + k L_refl for L_trans.
    """
    k = gt["k_s"][..., None]
    t0 = np.where(gt["t0"] > 0, gt["t0"], 1.0)[..., None]
    base = (gt["rgb"] - k * gt["l_refl"]) / (1.0 - k)
    return (base - (1.0 - t0) * gt["l_intr"]) / t0


# ----------------------------------------------------------------- cameras

def generate_trajectory(scene: AnalyticScene, n_views: int, seed: int, width: int = 64, height: int = 64,
                        fov_deg: float = 60.0, max_step_deg: float = 12.0) -> list[Camera]:
    """Arc of cameras around the glass container, all looking at its centroid."""
    if n_views < 2:
        raise ValueError("need at least two views")
    rng = np.random.default_rng(seed)
    target = scene.glass_centroid()
    W, D, H = scene.room
    glass = scene.glass()
    if glass:
        n = glass[0].normal()
        box_c = 0.5 * (np.array(scene.boxes[0]["lo"]) + np.array(scene.boxes[0]["hi"]))
        if np.dot(n, np.array(glass[0].center) - box_c) < 0:
            n = -n
        base = float(np.arctan2(n[1], n[0]))
    else:
        base = -np.pi / 2
    room_r = min(W / 2 - abs(target[0]), D / 2 - abs(target[1])) - 0.4
    radius = float(min(2.0, room_r) * rng.uniform(0.9, 1.0))
    if radius < 1.0:
        raise InfeasibleSceneError("room too small for a camera orbit")
    span = np.radians(min(100.0, max_step_deg * (n_views - 1)))
    phase = rng.uniform(-0.1, 0.1)
    height0 = float(min(target[2] + rng.uniform(0.4, 0.7), H - 0.3))
    cams = []
    for i in range(n_views):
        s = i / (n_views - 1)
        ang = base + phase + span * (s - 0.5)
        z = height0 + 0.15 * np.sin(2 * np.pi * s)
        pos = target + [radius * np.cos(ang), radius * np.sin(ang), 0.0]
        pos[2] = z
        cams.append(Camera.look_at(pos, target, width=width, height=height, fov_deg=fov_deg))
    return cams


def split_indices(n_views: int, hold_every: int = 8):
    """Train/test split; every ``hold_every``-th view (0, 8, 16, ...) is held out."""
    test = [i for i in range(n_views) if i % hold_every == 0]
    train = [i for i in range(n_views) if i % hold_every != 0]
    return train, test
