"""Command-line entry point: gen, init, train, render, eval.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Logs go to stderr; data goes to files.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import torch

log = logging.getLogger("glasssplat")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


class InputError(Exception):
    pass


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_config(path, known: set[str]) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"config {p} is not valid JSON: {e}") from e
    if not isinstance(cfg, dict):
        raise InputError(f"config {p} must hold a JSON object")
    unknown = set(cfg) - known
    if unknown:
        raise InputError(f"unknown config keys in {p}: {sorted(unknown)}")
    return cfg


def _resolve(args, defaults: dict, cfg_keys: set[str]) -> dict:
    """Defaults, then the config file, then explicitly given flags."""
    out = dict(defaults)
    out.update(_load_config(args.config, cfg_keys))
    for k in cfg_keys:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _load_data(path):
    from .dataset import load_scene_data

    p = Path(path)
    if not (p / "cameras.json").exists():
        raise InputError(f"no dataset at {p} (missing cameras.json)")
    return load_scene_data(p)


def _load_scene(path):
    from .io import load_scene

    p = Path(path)
    if not p.exists():
        raise InputError(f"scene file not found: {p}")
    try:
        return load_scene(p)
    except (json.JSONDecodeError, KeyError) as e:
        raise InputError(f"cannot read scene {p}: {e}") from e


# ---------------------------------------------------------------- gen

GEN_DEFAULTS = {"seed": None, "scenes": 5, "views": 48, "res": 64, "panels": 1, "boxes": 3,
                "room": [6.0, 6.0, 3.0], "container_size": None}


def cmd_gen(args) -> int:
    from .dataset import generate_dataset
    from .synthgen import InfeasibleSceneError

    cfg = _resolve(args, GEN_DEFAULTS, set(GEN_DEFAULTS))
    if cfg["seed"] is None:
        raise InputError("--seed is required")
    if cfg["scenes"] < 1 or cfg["views"] < 2 or cfg["res"] < 4:
        raise InputError("need scenes >= 1, views >= 2 and res >= 4")
    out = Path(args.out)
    try:
        paths = generate_dataset(out, cfg["seed"], cfg["scenes"], cfg["views"], cfg["res"], tuple(cfg["room"]),
                                 cfg["boxes"], cfg["panels"], cfg["container_size"])
    except InfeasibleSceneError as e:
        raise InputError(f"infeasible scene: {e}") from e
    _write_json(out / "gen_config.json", cfg)
    log.info("wrote %d scenes to %s", len(paths), out)
    return EXIT_OK


# ---------------------------------------------------------------- init

INIT_DEFAULTS = {"seed": None, "points": 2000, "grid_n": 8, "grid_k": 5, "sh_degree": 2, "f0": 0.04}


def cmd_init(args) -> int:
    from .initialize import initialize
    from .io import save_scene

    cfg = _resolve(args, INIT_DEFAULTS, set(INIT_DEFAULTS))
    if cfg["seed"] is None:
        raise InputError("--seed is required")
    data = _load_data(args.data)
    try:
        scene = initialize(data, cfg["seed"], cfg["points"], cfg["grid_n"], cfg["grid_k"], cfg["sh_degree"],
                           cfg["f0"])
    except ValueError as e:
        raise InputError(str(e)) from e
    out = Path(args.out)
    save_scene(scene, out, 0)
    _write_json(out.with_name(out.name.split(".")[0] + ".config.json"), cfg)
    log.info("initial scene %s: %s", out, scene.counts())
    return EXIT_OK


# ---------------------------------------------------------------- train

ABLATIONS = {
    "no_trans": ("use_trans",),
    "no_refl": ("use_refl",),
    "no_loss_trans": ("loss_trans",),
    "no_loss_depth": ("loss_depth",),
    "no_loss_normal": ("loss_normal",),
    "no_loss_geo": ("loss_depth", "loss_normal"),
}


def cmd_train(args) -> int:
    from .io import save_scene
    from .losses import LossWeights
    from .plots import plot_loss_curve
    from .train import NumericalFailure, TrainConfig, train

    known = {f.name for f in fields(TrainConfig)}
    cfg = _load_config(args.config, known)
    if args.iters is not None:
        cfg["iterations"] = args.iters
    if args.seed is not None:
        cfg["seed"] = args.seed
    if "seed" not in cfg:
        raise InputError("--seed is required (flag or config)")
    for flag, keys in ABLATIONS.items():
        if getattr(args, flag):
            for k in keys:
                cfg[k] = False
    try:
        if isinstance(cfg.get("weights"), dict):
            cfg["weights"] = LossWeights(**cfg["weights"])
        tc = TrainConfig.from_dict(cfg)
    except (TypeError, ValueError) as e:
        raise InputError(f"invalid training config: {e}") from e

    data = _load_data(args.data)
    scene, _ = _load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", asdict(tc))
    try:
        final, rows = train(scene, data, tc, out)
    except NumericalFailure as e:
        log.error("training diverged: %s", e)
        return EXIT_NUMERIC
    save_scene(final, out / "final.scene.json", tc.iterations)
    plot_loss_curve(rows, out / "loss_curve.png")
    if rows:
        log.info("L1 %.5f -> %.5f over %d iterations", rows[0]["l1"], rows[-1]["l1"], len(rows))
    log.info("final counts %s", final.counts())
    return EXIT_OK


# ---------------------------------------------------------------- render / eval

PNG_KIND = {"l_o": "radiance", "l_intr": "radiance", "l_trans": "radiance", "l_refl": "radiance",
            "z": "scalar", "z_trans": "scalar", "n": "normal", "t": "mask", "s": "mask", "k_s": "mask"}


def _select_views(data, which: str):
    if which == "test":
        return data.test_views()
    if which == "train":
        return data.train_views()
    if which == "all":
        return list(data.views)
    try:
        idx = [int(x) for x in which.split(",")]
    except ValueError as e:
        raise InputError(f"--views must be test, train, all or a comma list, got {which!r}") from e
    bad = [i for i in idx if not 0 <= i < len(data.views)]
    if bad:
        raise InputError(f"view indices out of range: {bad}")
    return [data.views[i] for i in idx]


def cmd_render(args) -> int:
    from .io import write_pfm, write_png
    from .plots import plot_layers
    from .transport import LAYERS, SceneBvhs, render

    data = _load_data(args.data)
    scene, _ = _load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bvhs = SceneBvhs.build(scene)
    for v in _select_views(data, args.views):
        layers = render(scene, v.camera, bvhs)
        stem = out / f"view_{v.index:03d}"
        for name in LAYERS:
            img = layers[name]
            write_pfm(f"{stem}_{name}.pfm", img)
            write_png(f"{stem}_{name}.png", np.clip(img, 0, 1) if PNG_KIND[name] == "mask" else img, PNG_KIND[name])
        plot_layers(layers, f"{stem}_layers.png", title=f"view {v.index}")
    log.info("rendered to %s", out)
    return EXIT_OK


def _oracle_prediction(view):
    H, W = view.depth.shape
    return {"l_o": view.rgb, "z": view.depth, "n": view.normal, "t": view.mask, "acc_alpha": np.ones((H, W))}


def cmd_eval(args) -> int:
    from .metrics import EvalReport, evaluate_view
    from .plots import plot_eval
    from .transport import SceneBvhs, render

    data = _load_data(args.data)
    if args.oracle:
        preds = {v.index: _oracle_prediction(v) for v in _select_views(data, args.views)}
    else:
        if args.scene is None:
            raise InputError("--scene is required unless --oracle is given")
        scene, _ = _load_scene(args.scene)
        bvhs = SceneBvhs.build(scene)
        preds = {v.index: render(scene, v.camera, bvhs) for v in _select_views(data, args.views)}
    rows = [evaluate_view(preds[v.index], v) for v in _select_views(data, args.views)]
    report = EvalReport.from_views(rows)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report.to_dict())
    (out / "summary.txt").write_text(report.summary() + "\n")
    with open(out / "per_view.csv", "w", newline="") as f:
        w = csv.writer(f)
        keys = list(asdict(rows[0]).keys())
        w.writerow(keys)
        for r in rows:
            w.writerow(["" if x is None else x for x in asdict(r).values()])
    plot_eval(report, out / "eval.png")
    print(report.summary(), file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glasssplat", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    p.add_argument("--workers", type=int, default=1, help="torch intra-op threads (default 1)")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="generate a synthetic glass-scene dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--config", help="JSON file with any of the flags below")
    g.add_argument("--seed", type=int, help="root seed (required)")
    g.add_argument("--scenes", type=int, help="number of scenes (default 5)")
    g.add_argument("--views", type=int, help="views per scene (default 48)")
    g.add_argument("--res", type=int, help="square image resolution (default 64)")
    g.add_argument("--panels", type=int, help="glass panels around the container, 0-5 (default 1)")
    g.add_argument("--boxes", type=int, help="opaque boxes (default 3)")
    g.add_argument("--room", type=float, nargs=3, metavar=("W", "D", "H"), help="room size (default 6 6 3)")
    g.add_argument("--container-size", dest="container_size", type=float,
                   help="glass container footprint; random when omitted")
    g.set_defaults(func=cmd_gen)

    i = sub.add_parser("init", help="initial primitive sets from a dataset scene")
    i.add_argument("--data", required=True, help="scene directory (scene_<k>)")
    i.add_argument("--out", required=True, help="output scene file (.scene.json)")
    i.add_argument("--config", help="JSON file with any of the flags below")
    i.add_argument("--seed", type=int, help="seed (required)")
    i.add_argument("--points", type=int, help="sampled depth points, split between interface and "
                                              "transmission sets (default 2000)")
    i.add_argument("--grid-n", dest="grid_n", type=int, help="reflection grid cells per axis (default 8)")
    i.add_argument("--grid-k", dest="grid_k", type=int, help="reflection primitives per cell (default 5)")
    i.add_argument("--sh-degree", dest="sh_degree", type=int, help="SH degree 0-3 (default 2)")
    i.add_argument("--f0", type=float, help="Fresnel reflectance at normal incidence (default 0.04)")
    i.set_defaults(func=cmd_init)

    t = sub.add_parser("train", help="optimize a scene")
    t.add_argument("--data", required=True, help="scene directory")
    t.add_argument("--scene", required=True, help="initial scene file")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--config", help="JSON training config (TrainConfig keys)")
    t.add_argument("--seed", type=int, help="seed (required unless in config)")
    t.add_argument("--iters", type=int, help="iterations (default 3000)")
    for flag in ABLATIONS:
        t.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("render", help="render every layer of a scene")
    r.add_argument("--scene", required=True)
    r.add_argument("--data", required=True, help="scene directory supplying the cameras")
    r.add_argument("--out", required=True)
    r.add_argument("--views", default="test", help="test, train, all or comma-separated indices (default test)")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("eval", help="evaluate a scene on held-out views")
    e.add_argument("--scene", help="scene file")
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--views", default="test", help="test, train, all or comma-separated indices (default test)")
    e.add_argument("--oracle", action="store_true", help="score the ground truth against itself")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    if args.workers < 1:
        log.error("--workers must be >= 1")
        return EXIT_INPUT
    torch.set_num_threads(args.workers)
    try:
        return args.func(args)
    except (InputError, FileNotFoundError) as e:
        log.error("%s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
