"""Model and pipeline configuration dataclasses.

Two presets: `toy()` for the synthetic desk-scale benchmark and `full()`
with the production dimensions (coarse dim 512, fine dim 128, 3D encoder
channels 128/256/512).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace


@dataclass
class Encoder3DConfig:
    channels: tuple = (16, 32, 64)
    in_channels: int = 56
    base_cell: float | None = None  # None -> bbox diagonal / base_cell_divisor
    base_cell_divisor: float = 256.0
    cell_factor: float = 2.0
    radius_factor: float = 2.5
    min_points: int = 4


@dataclass
class Encoder2DConfig:
    c_fine: int = 32
    c_coarse: int = 64
    widths: tuple = (24, 32, 48, 48)  # conv block channels; blocks 1-3 stride 2, block 4 stride 1
    kernels: tuple = (3, 3, 3, 3)  # per-block conv kernel size; smaller keeps the receptive field local
    target_size: int = 480
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.25, 0.25, 0.25)


@dataclass
class AlignConfig:
    layers: int = 4
    heads: int = 4
    ff_expand: int = 2


@dataclass
class MatchConfig:
    theta_c: float = 0.3
    temperature: float = 0.1
    window: int = 5


@dataclass
class RefineConfig:
    iterations: int = 3
    matcher: str = "ncc"  # "ncc" or "model"
    min_matches: int = 6
    alpha_floor: float = 0.5
    ncc_stride: int = 4
    ncc_patch: int = 9
    ncc_search: int = 8
    ncc_threshold: float = 0.7
    inlier_px: float = 3.0
    ransac_iters: int = 2000
    seed: int = 0


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 100
    max_steps: int | None = None
    seed: int = 0
    coarse_only: bool = False
    max_fine_pairs: int = 64
    checkpoint_every: int = 25  # epochs
    log_every: int = 50  # steps


@dataclass
class ModelConfig:
    enc3d: Encoder3DConfig = field(default_factory=Encoder3DConfig)
    enc2d: Encoder2DConfig = field(default_factory=Encoder2DConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    match: MatchConfig = field(default_factory=MatchConfig)

    @property
    def c_coarse(self):
        return self.enc2d.c_coarse

    @property
    def c_fine(self):
        return self.enc2d.c_fine

    @classmethod
    def toy(cls, image_size=64, base_cell_divisor=16.0):
        # two alignment layers: enough context at desk scale without letting
        # the stack memorize individual training views
        return cls(
            enc3d=Encoder3DConfig(channels=(16, 32, 64), base_cell_divisor=base_cell_divisor),
            enc2d=Encoder2DConfig(c_fine=32, c_coarse=64, widths=(24, 32, 48, 48), target_size=image_size),
            align=AlignConfig(layers=2),
        )

    @classmethod
    def full(cls):
        return cls(
            enc3d=Encoder3DConfig(channels=(128, 256, 512)),
            enc2d=Encoder2DConfig(c_fine=128, c_coarse=512, widths=(64, 128, 256, 256), target_size=480),
        )

    def with_target_size(self, size):
        return replace(self, enc2d=replace(self.enc2d, target_size=size))
