"""Gaussian-splat scene loading, opacity filtering, and subsampling.

Scenes come from the standard splat PLY layout: binary little-endian,
float32 properties ``x y z nx ny nz f_dc_0..2 f_rest_0..44 opacity
scale_0..2 rot_0..3``. Quaternions are stored (w, x, y, z) and may be
unnormalized; scales are stored as logs; opacities as pre-sigmoid logits.
SH coefficients are degree 3: 3 DC values followed by 45 higher-order
coefficients stored channel-major (15 per color channel).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SH_DIM = 48
N_REST = 45

REQUIRED_PROPS = (
    ["x", "y", "z", "nx", "ny", "nz"]
    + [f"f_dc_{i}" for i in range(3)]
    + [f"f_rest_{i}" for i in range(N_REST)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)


class PlyFormatError(ValueError):
    pass


class SceneDataError(ValueError):
    pass


@dataclass(frozen=True)
class Gaussian:
    position: np.ndarray
    rotation: np.ndarray  # (w,x,y,z), possibly unnormalized
    log_scale: np.ndarray
    opacity_logit: float
    sh: np.ndarray  # 48 coefficients: 3 DC + 45 rest (channel-major)


@dataclass
class GaussianScene:
    positions: np.ndarray  # (N,3)
    rotations: np.ndarray  # (N,4)
    log_scales: np.ndarray  # (N,3)
    opacity_logits: np.ndarray  # (N,)
    sh: np.ndarray  # (N,48)
    source_path: str = ""
    bbox: tuple = field(default=None)

    def __post_init__(self):
        if self.bbox is None and len(self.positions):
            self.bbox = (self.positions.min(axis=0), self.positions.max(axis=0))

    def __len__(self):
        return len(self.positions)

    def gaussian(self, i):
        return Gaussian(
            self.positions[i], self.rotations[i], self.log_scales[i], float(self.opacity_logits[i]), self.sh[i]
        )

    def activated_opacity(self):
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def select(self, idx):
        return GaussianScene(
            self.positions[idx].copy(),
            self.rotations[idx].copy(),
            self.log_scales[idx].copy(),
            self.opacity_logits[idx].copy(),
            self.sh[idx].copy(),
            source_path=self.source_path,
        )


def load_ply(path):
    """Read a binary little-endian splat PLY into a GaussianScene."""
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if not blob.startswith(b"ply\n") or end < 0:
        raise PlyFormatError(f"{path}: not a PLY file")
    header = blob[: end + len(b"end_header\n")].decode("ascii")
    payload = blob[end + len(b"end_header\n") :]

    n_vertex = None
    props = []
    for line in header.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise PlyFormatError(f"{path}: unsupported PLY format {parts[1]!r} (binary_little_endian required)")
        elif parts[0] == "element" and parts[1] == "vertex":
            n_vertex = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise PlyFormatError(f"{path}: property {parts[2]!r} must be float32")
            props.append(parts[2])
    if n_vertex is None:
        raise PlyFormatError(f"{path}: no vertex element")
    for name in REQUIRED_PROPS:
        if name not in props:
            raise PlyFormatError(f"{path}: missing property {name}")

    expected = n_vertex * len(props) * 4
    if len(payload) < expected:
        raise IOError(f"{path}: truncated payload ({len(payload)} bytes, need {expected})")
    data = np.frombuffer(payload[:expected], dtype="<f4").reshape(n_vertex, len(props)).astype(np.float64)
    col = {name: i for i, name in enumerate(props)}

    def cols(names):
        return data[:, [col[n] for n in names]]

    return GaussianScene(
        positions=cols(["x", "y", "z"]),
        rotations=cols([f"rot_{i}" for i in range(4)]),
        log_scales=cols([f"scale_{i}" for i in range(3)]),
        opacity_logits=data[:, col["opacity"]].copy(),
        sh=cols([f"f_dc_{i}" for i in range(3)] + [f"f_rest_{i}" for i in range(N_REST)]),
        source_path=str(path),
    )


def save_ply(path, scene):
    """Write a GaussianScene in the same layout load_ply reads (normals zero)."""
    n = len(scene)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in REQUIRED_PROPS]
    header += ["end_header"]
    rows = np.zeros((n, len(REQUIRED_PROPS)), dtype="<f4")
    rows[:, 0:3] = scene.positions
    rows[:, 6:9] = scene.sh[:, :3]
    rows[:, 9:54] = scene.sh[:, 3:]
    rows[:, 54] = scene.opacity_logits
    rows[:, 55:58] = scene.log_scales
    rows[:, 58:62] = scene.rotations
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        f.write(rows.tobytes())


def filter_by_opacity(scene, threshold=0.9):
    """Keep Gaussians whose sigmoid-activated opacity is >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"opacity threshold must be in [0,1], got {threshold}")
    keep = scene.activated_opacity() >= threshold
    return scene.select(np.flatnonzero(keep))


def subsample_uniform(scene, n=100_000, seed=0):
    """Uniform random subset of size n (identity when the scene is smaller)."""
    if n < 1:
        raise ValueError(f"subsample size must be >= 1, got {n}")
    if len(scene) <= n:
        return scene
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(scene), size=n, replace=False))
    return scene.select(idx)


def gaussian_input_features(scene):
    """Per-Gaussian 56-channel inputs for the 3D encoder.

    Row layout: activated opacity (1), SH coefficients (48), normalized
    quaternion (4), exp(log_scale) (3). Positions are returned separately.
    """
    if len(scene) == 0:
        raise SceneDataError("empty scene has no input features")
    for name, arr in (
        ("position", scene.positions),
        ("rotation", scene.rotations),
        ("log_scale", scene.log_scales),
        ("opacity", scene.opacity_logits),
        ("sh", scene.sh),
    ):
        bad = ~np.isfinite(arr).reshape(len(scene), -1).all(axis=1)
        if bad.any():
            raise SceneDataError(f"non-finite {name} at Gaussian index {int(np.flatnonzero(bad)[0])}")
    opacity = scene.activated_opacity()[:, None]
    norms = np.linalg.norm(scene.rotations, axis=1, keepdims=True)
    if (norms == 0).any():
        raise SceneDataError("zero-norm quaternion")
    quats = scene.rotations / norms
    scales = np.exp(scene.log_scales)
    feats = np.concatenate([opacity, scene.sh, quats, scales], axis=1)
    return feats, scene.positions.copy()


def prepare_scene(scene, opacity_threshold=0.9, max_gaussians=100_000, seed=0):
    """Filter then subsample, refusing to proceed on an empty result."""
    filtered = filter_by_opacity(scene, opacity_threshold)
    if len(filtered) == 0:
        raise SceneDataError(
            f"no Gaussians survive opacity filtering at threshold {opacity_threshold} "
            f"(scene {scene.source_path or '<memory>'})"
        )
    return subsample_uniform(filtered, max_gaussians, seed)
