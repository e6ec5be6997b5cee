"""Command-line entry point: synth / train / localize / refine / render / eval.

Exit codes: 0 success, 1 usage or data error, 2 localization failure.
Runs write their fully resolved key=value config into the output
directory as ``config.resolved``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

__version__ = "0.1.0"

DEFAULTS = {
    "seed": 0,
    "dims": "toy",  # toy | full
    "image_size": 64,
    "theta_c": 0.3,
    "temperature": 0.1,
    "inlier_px": 3.0,
    "ransac_iters": 2000,
    "refine_iterations": 3,
    "refine_matcher": "ncc",
    "alpha_floor": 0.5,
    "min_matches": 6,
    "lr": 1e-4,
    "epochs": 100,
    "max_steps": 0,  # 0 = no cap
    "coarse_only": False,
    "max_fine_pairs": 64,
    "opacity_threshold": 0.9,
    "max_gaussians": 100000,
    "base_cell_divisor": 16.0,
    "recall_t": 0.05,
    "recall_r": 5.0,
    "n_gaussians": 200,
    "extent": 2.0,
    "n_train_views": 50,
    "n_test_views": 10,
    "focal": 70.0,
    "min_coverage": 0.3,
    "threads": 1,
    "checkpoint_every": 25,
    "log_every": 50,
}


class UsageError(Exception):
    pass


class RunConfig:
    """Flat key=value configuration; every consumed key must be declared."""

    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                self.set(k, v)

    def set(self, key, raw):
        if key not in DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        default = DEFAULTS[key]
        if isinstance(default, bool):
            val = str(raw).strip().lower() in ("1", "true", "yes", "on") if not isinstance(raw, bool) else raw
        elif isinstance(default, int):
            val = int(raw)
        elif isinstance(default, float):
            val = float(raw)
        else:
            val = str(raw)
        self.values[key] = val

    def __getitem__(self, key):
        return self.values[key]

    @classmethod
    def from_args(cls, args):
        cfg = cls()
        path = getattr(args, "config", None)
        if path:
            for lineno, line in enumerate(open(path), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected 'key = value'")
                k, v = (s.strip() for s in line.split("=", 1))
                cfg.set(k, v)
        for item in getattr(args, "set", None) or []:
            if "=" not in item:
                raise UsageError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            cfg.set(k.strip(), v.strip())
        return cfg

    def write_resolved(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.resolved"), "w") as f:
            for k in sorted(self.values):
                f.write(f"{k} = {self.values[k]}\n")

    def model_config(self):
        from .config import ModelConfig

        if self["dims"] == "full":
            cfg = ModelConfig.full()
        else:
            cfg = ModelConfig.toy(image_size=self["image_size"], base_cell_divisor=self["base_cell_divisor"])
        cfg.match.theta_c = self["theta_c"]
        cfg.match.temperature = self["temperature"]
        return cfg

    def refine_config(self):
        from .config import RefineConfig

        return RefineConfig(
            iterations=self["refine_iterations"],
            matcher=self["refine_matcher"],
            min_matches=self["min_matches"],
            alpha_floor=self["alpha_floor"],
            inlier_px=self["inlier_px"],
            ransac_iters=self["ransac_iters"],
            seed=self["seed"],
        )


class _Logger:
    def __init__(self, json_path=None):
        self.f = open(json_path, "a") if json_path else None

    def __call__(self, msg, level="info"):
        print(msg, file=sys.stderr)
        if self.f:
            self.f.write(json.dumps({"time": time.time(), "level": level, "msg": msg}) + "\n")
            self.f.flush()


def _add_common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    p.add_argument("--log", help="JSON-lines log file")
    p.add_argument("--threads", type=int, default=None, help="worker-pool cap")


def _spec_from(cfg):
    from .synthetic_bench import BenchmarkSpec

    return BenchmarkSpec(
        n_gaussians=cfg["n_gaussians"],
        extent=cfg["extent"],
        n_train_views=cfg["n_train_views"],
        n_test_views=cfg["n_test_views"],
        image_size=cfg["image_size"],
        focal=cfg["focal"],
        min_coverage=cfg["min_coverage"],
        seed=cfg["seed"],
    )


def cmd_synth(args):
    from .synthetic_bench import generate

    cfg = RunConfig.from_args(args)
    log = _Logger(args.log)
    generate(_spec_from(cfg), args.out)
    cfg.write_resolved(args.out)
    log(f"benchmark written to {args.out}")
    return 0


def _scene_dirs(data_dir):
    train_root = os.path.join(data_dir, "train")
    root = train_root if os.path.isdir(train_root) else data_dir
    if os.path.exists(os.path.join(root, "scene.ply")):
        return [root]
    subs = sorted(
        os.path.join(root, d) for d in os.listdir(root) if os.path.exists(os.path.join(root, d, "scene.ply"))
    )
    if not subs:
        raise UsageError(f"no scene directories under {data_dir}")
    return subs


def cmd_train(args):
    from .config import TrainConfig
    from .pipeline import build_model_params
    from .supervision import load_training_scene, train

    cfg = RunConfig.from_args(args)
    log = _Logger(args.log)
    model_cfg = cfg.model_config()
    train_cfg = TrainConfig(
        lr=cfg["lr"],
        epochs=cfg["epochs"],
        max_steps=cfg["max_steps"] or None,
        seed=cfg["seed"],
        coarse_only=cfg["coarse_only"],
        max_fine_pairs=cfg["max_fine_pairs"],
        checkpoint_every=cfg["checkpoint_every"],
        log_every=cfg["log_every"],
    )
    scenes = [
        load_training_scene(d, model_cfg, cfg["opacity_threshold"], cfg["max_gaussians"], cfg["seed"])
        for d in _scene_dirs(args.data)
    ]
    params = build_model_params(cfg["seed"], model_cfg)
    os.makedirs(args.out, exist_ok=True)
    losses = train(scenes, params, model_cfg, train_cfg, out_dir=args.out, log=log)
    with open(os.path.join(args.out, "loss_log.csv"), "w") as f:
        f.write("step,loss\n")
        f.writelines(f"{i + 1},{v!r}\n" for i, v in enumerate(losses))
    with open(os.path.join(args.out, "model.config.json"), "w") as f:
        json.dump(cfg.values, f, indent=2)
    cfg.write_resolved(args.out)
    log(f"trained {len(losses)} steps; first loss {losses[0]:.4f}, last {losses[-1]:.4f}")
    return 0


def _load_model(model_path):
    from .params import ModelParams

    params = ModelParams.load(model_path)
    sidecar = os.path.join(os.path.dirname(model_path), "model.config.json")
    saved = json.load(open(sidecar)) if os.path.exists(sidecar) else None
    return params, saved


def cmd_localize(args):
    from .encoder2d import load_image
    from .geometry import load_intrinsics, save_poses
    from .pipeline import PreparedScene
    from .refinement import localize
    from .scene_io import load_ply

    cfg = RunConfig.from_args(args)
    log = _Logger(args.log)
    params, saved = _load_model(args.model)
    if saved:
        for k in ("dims", "image_size", "base_cell_divisor", "coarse_only"):
            cfg.set(k, saved[k])
    model_cfg = cfg.model_config()
    scene = load_ply(args.scene)
    prepared = PreparedScene.prepare(scene, model_cfg, cfg["opacity_threshold"], cfg["max_gaussians"], cfg["seed"])
    K = load_intrinsics(args.intrinsics)
    image = load_image(args.image)
    result = localize(
        image, prepared, params, K, model_cfg, cfg.refine_config(), seed=cfg["seed"], coarse_only=cfg["coarse_only"]
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    cfg.write_resolved(out_dir)
    if args.diag:
        diag = dict(result.diagnostics)
        diag.pop("match_pixels", None)
        with open(args.diag, "w") as f:
            json.dump(diag, f, indent=2, default=float)
    if not result.success:
        log(f"localization failed: {result.diagnostics.get('failure')}", level="error")
        return 2
    save_poses(args.out, [result.pose])
    log(f"pose written to {args.out}")
    return 0


def cmd_refine(args):
    from .encoder2d import load_image
    from .geometry import load_intrinsics, load_poses, save_poses
    from .refinement import refine
    from .scene_io import load_ply

    cfg = RunConfig.from_args(args)
    log = _Logger(args.log)
    scene = load_ply(args.scene)
    K = load_intrinsics(args.intrinsics)
    pose0 = load_poses(args.init_pose)[0]
    query = load_image(args.image).astype(np.float64) / 255.0
    if query.shape[:2] != (K.height, K.width):
        raise UsageError("query image size does not match intrinsics")
    pose, diag = refine(query, pose0, scene, K, cfg.refine_config())
    save_poses(args.out, [pose])
    cfg.write_resolved(os.path.dirname(os.path.abspath(args.out)) or ".")
    log(f"refined pose written to {args.out} ({json.dumps(diag['iterations'], default=float)})")
    return 0


def cmd_render(args):
    from .encoder2d import save_image
    from .geometry import load_intrinsics, load_poses
    from .renderer import render_tile_parallel
    from .scene_io import load_ply

    cfg = RunConfig.from_args(args)
    log = _Logger(args.log)
    scene = load_ply(args.scene)
    K = load_intrinsics(args.intrinsics)
    pose = load_poses(args.pose)[0]
    out = render_tile_parallel(scene, pose, K, threads=args.threads or cfg["threads"])
    save_image(args.out_color, out.color)
    dmax = float(out.depth.max()) or 1.0
    scale = dmax / 65535.0
    depth16 = np.round(out.depth / scale).astype(">u2")
    with open(args.out_depth, "wb") as f:
        f.write(f"P5\n{depth16.shape[1]} {depth16.shape[0]}\n65535\n".encode())
        f.write(depth16.tobytes())
    with open(args.out_depth + ".scale.txt", "w") as f:
        f.write(f"{scale!r}\n")
    cfg.write_resolved(os.path.dirname(os.path.abspath(args.out_color)) or ".")
    log(f"rendered {args.scene} -> {args.out_color}, {args.out_depth}")
    return 0


def cmd_eval(args):
    from .encoder2d import load_image
    from .geometry import load_intrinsics, load_poses
    from .pipeline import PreparedScene
    from .scene_io import load_ply
    from .synthetic_bench import evaluate

    cfg = RunConfig.from_args(args)
    log = _Logger(args.log)
    params, saved = _load_model(args.model)
    if saved:
        for k in ("dims", "image_size", "base_cell_divisor", "coarse_only"):
            cfg.set(k, saved[k])
    model_cfg = cfg.model_config()
    test_root = os.path.join(args.bench, "test")
    scene_dirs = sorted(os.path.join(test_root, d) for d in os.listdir(test_root))
    reports = {}
    for sd in scene_dirs:
        scene = load_ply(os.path.join(sd, "scene.ply"))
        K = load_intrinsics(os.path.join(sd, "intrinsics.txt"))
        poses = load_poses(os.path.join(sd, "poses.txt"))
        img_dir = os.path.join(sd, "images")
        images = [load_image(os.path.join(img_dir, f)) for f in sorted(os.listdir(img_dir))]
        prepared = PreparedScene.prepare(scene, model_cfg, cfg["opacity_threshold"], cfg["max_gaussians"], cfg["seed"])
        report, _rows = evaluate(
            params, prepared, images, poses, K, model_cfg, cfg.refine_config(),
            out_dir=os.path.join(args.out, os.path.basename(sd)),
            t_thresh=cfg["recall_t"], r_thresh=cfg["recall_r"],
            coarse_only=cfg["coarse_only"], seed=cfg["seed"], log=log,
        )
        reports[os.path.basename(sd)] = report
        log(f"{sd}: recall(refined)={report['recall_refined']:.3f} median={report['median_refined']}")
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(reports, f, indent=2)
    cfg.write_resolved(args.out)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="splatloc", description="Visual localization against Gaussian-splat scenes")
    p.add_argument("--version", action="version", version=f"splatloc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic benchmark")
    sp.add_argument("--out", required=True)
    _add_common(sp)
    sp.set_defaults(func=cmd_synth)

    tp = sub.add_parser("train", help="train the matcher on a scene manifest")
    tp.add_argument("--data", required=True, help="benchmark dir or scene dir")
    tp.add_argument("--out", required=True)
    _add_common(tp)
    tp.set_defaults(func=cmd_train)

    lp = sub.add_parser("localize", help="estimate the pose of one query image")
    lp.add_argument("--scene", required=True)
    lp.add_argument("--model", required=True)
    lp.add_argument("--image", required=True)
    lp.add_argument("--intrinsics", required=True)
    lp.add_argument("--out", required=True, help="pose output file")
    lp.add_argument("--diag", help="diagnostics JSON output")
    _add_common(lp)
    lp.set_defaults(func=cmd_localize)

    rp = sub.add_parser("refine", help="refine an initial pose (render-and-compare)")
    rp.add_argument("--scene", required=True)
    rp.add_argument("--image", required=True)
    rp.add_argument("--intrinsics", required=True)
    rp.add_argument("--init-pose", required=True, dest="init_pose")
    rp.add_argument("--out", required=True)
    _add_common(rp)
    rp.set_defaults(func=cmd_refine)

    dp = sub.add_parser("render", help="render color + depth at a pose")
    dp.add_argument("--scene", required=True)
    dp.add_argument("--pose", required=True)
    dp.add_argument("--intrinsics", required=True)
    dp.add_argument("--out-color", required=True, dest="out_color")
    dp.add_argument("--out-depth", required=True, dest="out_depth")
    _add_common(dp)
    dp.set_defaults(func=cmd_render)

    ep = sub.add_parser("eval", help="evaluate a trained model on a benchmark")
    ep.add_argument("--bench", required=True)
    ep.add_argument("--model", required=True)
    ep.add_argument("--out", required=True)
    _add_common(ep)
    ep.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
