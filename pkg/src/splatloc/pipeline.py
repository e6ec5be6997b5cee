"""Model assembly: parameter initialization and the shared forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import alignment, encoder2d, encoder3d, matching, scene_io
from . import tensor as T
from .params import ModelParams


def build_model_params(seed, cfg, dtype=np.float64):
    rng = np.random.default_rng(seed)
    params = ModelParams(dtype=dtype)
    encoder3d.init_params(params, rng, cfg.enc3d)
    encoder2d.init_params(params, rng, cfg.enc2d)
    alignment.init_params(params, rng, cfg.c_coarse, cfg.align)
    matching.init_params(params, rng, cfg.c_coarse, cfg.c_fine)
    return params


@dataclass
class PreparedScene:
    """Filtered + subsampled scene with its precomputed encoder geometry."""

    scene: "scene_io.GaussianScene"
    features56: np.ndarray
    plan: "encoder3d.ScenePlan"

    @classmethod
    def prepare(cls, scene, cfg, opacity_threshold=0.9, max_gaussians=100_000, seed=0):
        kept = scene_io.prepare_scene(scene, opacity_threshold, max_gaussians, seed)
        feats, positions = scene_io.gaussian_input_features(kept)
        plan = encoder3d.build_scene_plan(positions, cfg.enc3d)
        return cls(scene=kept, features56=feats, plan=plan)


def forward(prepared, image_norm, params, cfg):
    """Shared forward pass up to the coarse score matrix.

    `image_norm`: preprocessed (H, W, 3) image. Returns
    (scene_encoding, image_encoding, aligned, scores).
    """
    scene_enc = encoder3d.encode_scene_with_plan(prepared.plan, prepared.features56, params, cfg.enc3d)
    image_enc = encoder2d.encode_image(image_norm, params, cfg.enc2d)
    aligned = alignment.align(scene_enc, image_enc, params, cfg.align)
    scores = matching.shared_space_scores(aligned, params, cfg.match.temperature)
    return scene_enc, image_enc, aligned, scores


def encode_scene_cached(prepared, params, cfg):
    """Scene-side encoding only (cacheable across queries; weights frozen)."""
    enc = encoder3d.encode_scene_with_plan(prepared.plan, prepared.features56, params, cfg.enc3d)
    return encoder3d.SceneEncoding(points=enc.points, features=T.Tensor(enc.features.data), stage_trace=enc.stage_trace)
