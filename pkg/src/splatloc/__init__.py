"""Visual localization against 3D Gaussian-splat scenes.

Pipeline: a sparse-convolution scene encoder and a convolutional image
encoder feed an attention alignment stage; dual-softmax coarse matching
plus subpixel fine matching yield 2D-3D correspondences, solved with
PnP+RANSAC and polished by render-and-compare refinement.
"""

from .config import (
    AlignConfig,
    Encoder2DConfig,
    Encoder3DConfig,
    MatchConfig,
    ModelConfig,
    RefineConfig,
    TrainConfig,
)
from .geometry import CameraIntrinsics, Pose, pose_error, recall
from .params import ModelParams
from .pipeline import PreparedScene, build_model_params, forward
from .refinement import LocalizeResult, localize, refine
from .renderer import RenderOutput, render, render_tile_parallel
from .scene_io import GaussianScene, load_ply, save_ply

__version__ = "0.1.0"

__all__ = [
    "AlignConfig",
    "CameraIntrinsics",
    "Encoder2DConfig",
    "Encoder3DConfig",
    "GaussianScene",
    "LocalizeResult",
    "MatchConfig",
    "ModelConfig",
    "ModelParams",
    "Pose",
    "PreparedScene",
    "RefineConfig",
    "RenderOutput",
    "TrainConfig",
    "build_model_params",
    "forward",
    "load_ply",
    "localize",
    "pose_error",
    "recall",
    "refine",
    "render",
    "render_tile_parallel",
    "save_ply",
    "__version__",
]
