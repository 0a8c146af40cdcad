"""Primitives, cameras, rays and the three-set decomposed scene.

Primitives are stored set-wise as arrays (``GaussianSet``) because every
renderer in the package is batched; ``GaussianPrimitive`` is the per-splat
view used by the scalar reference routines and the scene file.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

S_MIN = 1e-4
DEFAULT_F0 = 0.04
DEFAULT_SH_DEGREE = 2


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values at unit directions, shape (..., (degree+1)**2)."""
    if degree > 3:
        raise ValueError("sh degree above 3 is not supported")
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2.0 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, axis=-1)


def eval_sh(sh: np.ndarray, direction: np.ndarray, degree: int, clamp: bool = True) -> np.ndarray:
    """Radiance of an SH block ``sh`` (coeffs x 3) seen along ``direction``.

    Uses the splatting convention: 0.5 is added to the expansion and the result
    is clamped at zero.
    """
    sh = np.asarray(sh, dtype=np.float64)
    basis = sh_basis(direction, degree)
    rgb = basis @ sh[: sh_coeff_count(degree)] + 0.5
    return np.maximum(rgb, 0.0) if clamp else rgb


def rgb_to_sh_dc(rgb):
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from (w, x, y, z) quaternions; input is normalized first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """(w, x, y, z) quaternion of a rotation matrix (single matrix)."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q / np.linalg.norm(q)


def quat_from_normal(n: np.ndarray) -> np.ndarray:
    """A quaternion whose frame has ``n`` as third axis (tangent axes arbitrary)."""
    n = np.asarray(n, dtype=np.float64)
    n = n / np.linalg.norm(n)
    helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    tu = np.cross(helper, n)
    tu /= np.linalg.norm(tu)
    tv = np.cross(n, tu)
    return matrix_to_quat(np.stack([tu, tv, n], axis=1))


@dataclass
class GaussianPrimitive:
    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity_logit: float
    sh: np.ndarray

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))


@dataclass
class InterfaceAttributes:
    trans_logit: float = -4.0
    spec_logit: float = -4.0

    @property
    def transparency(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.trans_logit)))

    @property
    def specularity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.spec_logit)))


def primitive_frame(g: GaussianPrimitive):
    """Tangent axes and normal (t_u, t_v, n) of a primitive."""
    m = quat_to_matrix(g.rot)
    return m[:, 0], m[:, 1], m[:, 2]


@dataclass
class GaussianSet:
    """Array storage for one primitive set.

    ``trans_logit`` / ``spec_logit`` are only populated for the interface set.
    """

    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity_logit: np.ndarray
    sh: np.ndarray
    trans_logit: np.ndarray | None = None
    spec_logit: np.ndarray | None = None

    @classmethod
    def empty(cls, sh_degree: int, interface: bool = False) -> "GaussianSet":
        k = sh_coeff_count(sh_degree)
        extra = np.zeros(0) if interface else None
        return cls(
            mu=np.zeros((0, 3)),
            rot=np.zeros((0, 4)),
            scale=np.zeros((0, 2)),
            opacity_logit=np.zeros(0),
            sh=np.zeros((0, k, 3)),
            trans_logit=extra,
            spec_logit=None if extra is None else np.zeros(0),
        )

    @classmethod
    def from_primitives(cls, prims, sh_degree: int, attrs=None) -> "GaussianSet":
        if not prims:
            return cls.empty(sh_degree, interface=attrs is not None)
        out = cls(
            mu=np.array([p.mu for p in prims], dtype=np.float64),
            rot=np.array([p.rot for p in prims], dtype=np.float64),
            scale=np.array([p.scale for p in prims], dtype=np.float64),
            opacity_logit=np.array([p.opacity_logit for p in prims], dtype=np.float64),
            sh=np.array([p.sh for p in prims], dtype=np.float64),
        )
        if attrs is not None:
            out.trans_logit = np.array([a.trans_logit for a in attrs], dtype=np.float64)
            out.spec_logit = np.array([a.spec_logit for a in attrs], dtype=np.float64)
        return out

    @property
    def is_interface(self) -> bool:
        return self.trans_logit is not None

    def __len__(self) -> int:
        return self.mu.shape[0]

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.mu[i].copy(), self.rot[i].copy(), self.scale[i].copy(),
            float(self.opacity_logit[i]), self.sh[i].copy(),
        )

    def primitives(self) -> list[GaussianPrimitive]:
        return [self.primitive(i) for i in range(len(self))]

    def attributes(self, i: int) -> InterfaceAttributes:
        return InterfaceAttributes(float(self.trans_logit[i]), float(self.spec_logit[i]))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {
            "mu": self.mu, "rot": self.rot, "scale": self.scale,
            "opacity_logit": self.opacity_logit, "sh": self.sh,
        }
        if self.is_interface:
            out["trans_logit"] = self.trans_logit
            out["spec_logit"] = self.spec_logit
        return out

    def take(self, idx) -> "GaussianSet":
        idx = np.asarray(idx)
        return GaussianSet(**{k: v[idx].copy() for k, v in self.arrays().items()})

    def concat(self, other: "GaussianSet") -> "GaussianSet":
        a, b = self.arrays(), other.arrays()
        return GaussianSet(**{k: np.concatenate([a[k], b[k]], axis=0) for k in a})

    def copy(self) -> "GaussianSet":
        return GaussianSet(**{k: v.copy() for k, v in self.arrays().items()})

    def frames(self) -> np.ndarray:
        """(N, 3, 3) matrices with columns t_u, t_v, n."""
        if len(self) == 0:
            return np.zeros((0, 3, 3))
        return quat_to_matrix(self.rot)

    def opacity(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logit))


@dataclass
class DecomposedScene:
    intr: GaussianSet
    trans: GaussianSet
    refl: GaussianSet
    sh_degree: int = DEFAULT_SH_DEGREE
    f0: float = DEFAULT_F0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def empty(cls, sh_degree: int = DEFAULT_SH_DEGREE, f0: float = DEFAULT_F0, background=None):
        return cls(
            intr=GaussianSet.empty(sh_degree, interface=True),
            trans=GaussianSet.empty(sh_degree),
            refl=GaussianSet.empty(sh_degree),
            sh_degree=sh_degree,
            f0=f0,
            background=np.zeros(3) if background is None else np.asarray(background, dtype=np.float64),
        )

    def sets(self) -> dict[str, GaussianSet]:
        return {"intr": self.intr, "trans": self.trans, "refl": self.refl}

    def copy(self) -> "DecomposedScene":
        return DecomposedScene(
            self.intr.copy(), self.trans.copy(), self.refl.copy(),
            self.sh_degree, self.f0, np.array(self.background, dtype=np.float64),
        )

    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.sets().items()}

    def extent(self) -> tuple[np.ndarray, float]:
        """Center and bounding-sphere radius of all primitive positions."""
        pts = np.concatenate([s.mu for s in self.sets().values()], axis=0)
        if len(pts) == 0:
            return np.zeros(3), 1.0
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        center = 0.5 * (lo + hi)
        radius = float(np.linalg.norm(pts - center, axis=1).max())
        return center, max(radius, 1e-6)


@dataclass
class Ray:
    origin: np.ndarray
    dir: np.ndarray
    t_min: float = 0.0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.dir, dtype=np.float64)
        self.dir = d / np.linalg.norm(d)


@dataclass
class Camera:
    """Pinhole camera. ``orientation`` maps world to camera coordinates.

    Camera axes: +x right, +y down, +z forward (looking direction).
    """

    position: np.ndarray
    orientation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.orientation = np.asarray(self.orientation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.orientation
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise ValueError("orientation must be a proper rotation")

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0), width=64, height=64, fov_deg=60.0):
        position = np.asarray(position, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - position
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        rot = np.stack([right, down, fwd], axis=0)
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(position, rot, f, f, width / 2, height / 2, width, height)

    @property
    def forward(self) -> np.ndarray:
        return self.orientation[2]

    def pixel_dirs(self) -> np.ndarray:
        """Unit world-space directions through pixel centers, shape (H, W, 3)."""
        j, i = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        local = np.stack([(j - self.cx) / self.fx, (i - self.cy) / self.fy, np.ones_like(j)], axis=-1)
        world = local @ self.orientation
        return world / np.linalg.norm(world, axis=-1, keepdims=True)

    def project(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates and camera-z of world points."""
        pc = (np.asarray(pts, dtype=np.float64) - self.position) @ self.orientation.T
        z = pc[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            px = np.stack([self.fx * pc[..., 0] / z + self.cx, self.fy * pc[..., 1] / z + self.cy], axis=-1)
        return px, z

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "world_to_camera": self.orientation.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(
            np.array(d["position"]), np.array(d["world_to_camera"]),
            d["fx"], d["fy"], d["cx"], d["cy"], int(d["width"]), int(d["height"]),
        )


def generate_rays(cam: Camera) -> list[list[Ray]]:
    dirs = cam.pixel_dirs()
    return [[Ray(cam.position, dirs[i, j], 0.0) for j in range(cam.width)] for i in range(cam.height)]


@dataclass
class ImageBuffer:
    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64).reshape(-1)
        if self.data.size != self.width * self.height * self.channels:
            raise ValueError("data length does not match image dimensions")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[..., None]
        return cls(arr.shape[1], arr.shape[0], arr.shape[2], arr)

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width, self.channels)
