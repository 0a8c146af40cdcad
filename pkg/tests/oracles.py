"""Independent reference implementations used as test oracles.

Written without the package's renderer so agreement is a real check:
plain per-ray loops over every primitive, explicit sorting, scalar compositing.
"""
import numpy as np

ALPHA_CAP = 0.999
T_STOP = 1e-4
G_CUTOFF = np.exp(-4.5)
EPS_PARALLEL = 1e-8

Y00 = 0.28209479177387814
Y1 = 0.4886025119029199
Y2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)


def quat_matrix(q):
    w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
    return np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])


def sh_table(d, degree):
    """Real SH values from an explicit table (degree <= 2)."""
    x, y, z = d
    vals = [Y00]
    if degree >= 1:
        vals += [-Y1 * y, Y1 * z, -Y1 * x]
    if degree >= 2:
        vals += [Y2[0] * x * y, Y2[1] * y * z, Y2[2] * (2 * z * z - x * x - y * y), Y2[3] * x * z,
                 Y2[4] * (x * x - y * y)]
    return np.array(vals)


def color(sh, d, degree):
    return np.maximum(sh_table(d, degree) @ sh[: (degree + 1) ** 2] + 0.5, 0.0)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def frames(gs):
    return np.array([quat_matrix(q) for q in gs.rot]).reshape(-1, 3, 3)


def ray_hits(gs, o, d, t_min, fr=None):
    """All (depth, prim, alpha) hits of one ray, sorted by (depth, prim)."""
    if len(gs.mu) == 0:
        return []
    fr = frames(gs) if fr is None else fr
    n = fr[:, :, 2]
    den = n @ d
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.einsum("ij,ij->i", gs.mu - o, n) / den
    p = o + t[:, None] * d - gs.mu
    u = np.einsum("ij,ij->i", p, fr[:, :, 0]) / gs.scale[:, 0]
    v = np.einsum("ij,ij->i", p, fr[:, :, 1]) / gs.scale[:, 1]
    g = np.exp(-0.5 * (u * u + v * v))
    ok = (np.abs(den) > EPS_PARALLEL) & (t > t_min) & (g >= G_CUTOFF)
    hits = [(t[i], i, min(sigmoid(gs.opacity_logit[i]) * g[i], ALPHA_CAP)) for i in np.nonzero(ok)[0]]
    hits.sort(key=lambda h: (h[0], h[1]))
    return hits


def composite_ray(gs, o, d, t_min, degree, fr=None):
    """Front-to-back composite of one ray; returns a dict of channels."""
    fr = frames(gs) if fr is None else fr
    T = 1.0
    rad = np.zeros(3)
    nrm = np.zeros(3)
    z = t = s = acc = 0.0
    for depth, i, a in ray_hits(gs, o, d, t_min, fr):
        if T < T_STOP:
            break
        w = T * a
        rad += w * color(gs.sh[i], d, degree)
        n = fr[i][:, 2]
        if n @ d > 0:
            n = -n
        nrm += w * n
        z += w * depth
        if gs.trans_logit is not None:
            t += w * sigmoid(gs.trans_logit[i])
            s += w * sigmoid(gs.spec_logit[i])
        acc += w
        T *= 1.0 - a
    nn = np.linalg.norm(nrm)
    nrm = nrm / nn if acc > 0 and nn > 0 else np.zeros(3)
    return {"l": rad, "z": z, "n": nrm, "t": t, "s": s, "acc": acc, "T": T}


def rasterize(gs, cam, degree):
    H, W = cam.height, cam.width
    dirs = cam.pixel_dirs()
    fr = frames(gs)
    out = {"l": np.zeros((H, W, 3)), "z": np.zeros((H, W)), "n": np.zeros((H, W, 3)), "t": np.zeros((H, W)),
           "s": np.zeros((H, W)), "acc": np.zeros((H, W)), "T": np.zeros((H, W))}
    for i in range(H):
        for j in range(W):
            px = composite_ray(gs, cam.position, dirs[i, j], 0.0, degree, fr)
            for k in out:
                out[k][i, j] = px[k]
    return out


def ssim_textbook(a, b, size=11, sigma=1.5, c1=0.01 ** 2, c2=0.03 ** 2):
    """Mean SSIM with explicit window sums and zero padding."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    H, W, C = a.shape
    r = size // 2
    x = np.arange(size) - r
    g1 = np.exp(-x ** 2 / (2 * sigma ** 2))
    g1 /= g1.sum()
    win = np.outer(g1, g1)
    pa = np.pad(a, ((r, r), (r, r), (0, 0)))
    pb = np.pad(b, ((r, r), (r, r), (0, 0)))
    total = 0.0
    for c in range(C):
        for i in range(H):
            for j in range(W):
                wa = pa[i:i + size, j:j + size, c]
                wb = pb[i:i + size, j:j + size, c]
                ma = (win * wa).sum()
                mb = (win * wb).sum()
                va = (win * wa * wa).sum() - ma * ma
                vb = (win * wb * wb).sum() - mb * mb
                cov = (win * wa * wb).sum() - ma * mb
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
    return total / (H * W * C)
