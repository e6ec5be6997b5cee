"""End-to-end toy experiment: synthesize a benchmark, train the matcher,
and evaluate pose recall on held-out views.

Usage:
    python3 scripts/run_toy_benchmark.py --out runs/toy --steps 800
"""

import argparse
import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from splatloc import supervision
from splatloc.config import ModelConfig, RefineConfig, TrainConfig
from splatloc.encoder2d import preprocess
from splatloc.pipeline import PreparedScene, build_model_params
from splatloc.synthetic_bench import BenchmarkSpec, evaluate, make_scene, make_views


def to_uint8(images):
    return [(np.clip(i, 0, 1) * 255 + 0.5).astype(np.uint8) for i in images]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--steps", type=int, default=800)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-gaussians", type=int, default=200)
    ap.add_argument("--image-size", type=int, default=64)
    ap.add_argument("--coarse-only", action="store_true")
    args = ap.parse_args()

    spec = BenchmarkSpec(n_gaussians=args.n_gaussians, image_size=args.image_size, seed=args.seed)
    scene = make_scene(spec)
    train_imgs, train_poses, K = make_views(scene, spec, spec.n_train_views, seed_offset=0)
    test_imgs, test_poses, _ = make_views(scene, spec, spec.n_test_views, seed_offset=7919)

    cfg = ModelConfig.toy(image_size=args.image_size)
    prepared = PreparedScene.prepare(scene, cfg)
    params = build_model_params(args.seed, cfg)
    pre = [preprocess(i, cfg.enc2d) for i in to_uint8(train_imgs)]
    ts = supervision.TrainScene(
        prepared=prepared, images=pre, poses=train_poses, K=K.resized(args.image_size, args.image_size)
    )

    os.makedirs(args.out, exist_ok=True)
    t0 = time.time()
    losses = supervision.train(
        [ts], params, cfg,
        TrainConfig(max_steps=args.steps, epochs=10_000, coarse_only=args.coarse_only, seed=args.seed),
        out_dir=args.out,
        log=lambda m: print(m, file=sys.stderr),
    )
    print(f"trained {len(losses)} steps in {time.time() - t0:.0f}s: "
          f"loss {losses[0]:.3f} -> {losses[-1]:.3f}")

    report, _rows = evaluate(
        params, prepared, to_uint8(test_imgs), test_poses, K, cfg, RefineConfig(),
        out_dir=os.path.join(args.out, "eval"),
        t_thresh=0.05 * spec.extent, r_thresh=5.0,
        coarse_only=args.coarse_only, seed=args.seed,
        log=lambda m: print(m, file=sys.stderr),
    )
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
