"""Matplotlib figures written next to the numeric outputs."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .io import linear_to_srgb

PANELS = (
    ("l_o", "final radiance"), ("l_intr", "interface"), ("l_trans", "transmission"), ("l_refl", "reflection"),
    ("z", "depth"), ("n", "normal"), ("t", "transparency"), ("s", "specularity"), ("k_s", "specular weight"),
)


def _show(ax, key, img):
    if key.startswith("l_"):
        ax.imshow(linear_to_srgb(img))
    elif key == "n":
        ax.imshow(np.clip(0.5 * (img + 1.0), 0, 1))
    elif key in ("t", "s", "k_s"):
        ax.imshow(img, cmap="gray", vmin=0, vmax=1)
    else:
        ax.imshow(img, cmap="viridis")


def plot_layers(layers: dict, path, title: str | None = None):
    keys = [(k, name) for k, name in PANELS if k in layers]
    cols = 5
    rows = (len(keys) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.2 * cols, 2.4 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, (k, name) in zip(axes.flat, keys):
        _show(ax, k, layers[k])
        ax.set_title(name, fontsize=8)
    if title:
        fig.suptitle(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss_curve(rows: list[dict], path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if rows:
        it = [r["iter"] for r in rows]
        for key in ("total", "l1", "depth", "trans"):
            ax.plot(it, [r[key] for r in rows], label=key, lw=0.8)
        ax.set_yscale("log")
        ax.legend(fontsize=8)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_eval(report, path):
    views = report.views
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3))
    x = np.arange(len(views))
    labels = [str(v.view) for v in views]
    a.bar(x, [v.psnr for v in views], color="tab:blue")
    a.set_title(f"PSNR (mean {report.psnr:.2f} dB)", fontsize=9)
    a.set_xlabel("view")
    g = [v.glass_absrel if v.glass_absrel is not None else 0.0 for v in views]
    b.bar(x, g, color="tab:orange")
    for ax in (a, b):
        ax.set_xticks(x, labels)
    b.set_title("glass-region depth AbsRel", fontsize=9)
    b.set_xlabel("view")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
