"""Point-cloud encoder: grid downsampling plus kernel-point convolutions.

Each stage runs two KPConv layers at the current resolution and then
pools onto a voxel grid whose cell doubles per stage. Kernel influence
matrices depend only on geometry, so a scene's full convolution/pooling
structure is built once (`build_scene_plan`) and reused across training
steps; only the per-kernel weight matrices are learned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import tensor as T
from .params import glorot


class EncoderConfigError(ValueError):
    pass


def _kernel_layout():
    """15 fixed kernel points: one at the origin, 14 on the unit shell.

    Shell layout is the cube-corner + axis arrangement (a near-uniform
    repulsion-style placement); scaled by the influence radius at use.
    """
    axes = []
    for s in (1.0, -1.0):
        axes += [[s, 0, 0], [0, s, 0], [0, 0, s]]
    corners = [[sx, sy, sz] for sx in (1, -1) for sy in (1, -1) for sz in (1, -1)]
    shell = np.array(axes + corners, dtype=np.float64)
    shell[6:] /= np.sqrt(3.0)
    return np.vstack([np.zeros((1, 3)), shell])


KERNEL_POINTS = _kernel_layout()
N_KERNEL = len(KERNEL_POINTS)


def grid_downsample(points, features, cell):
    """Average positions and features over occupied voxels of side `cell`.

    Returns (centroids (M,3), pooled features (M,C), assignment (N,) of
    input index -> output index). Output order follows sorted voxel keys.
    """
    if cell <= 0:
        raise ValueError(f"grid cell must be positive, got {cell}")
    points = np.asarray(points, dtype=np.float64)
    origin = points.min(axis=0)
    keys = np.floor((points - origin) / cell).astype(np.int64)
    uniq, assignment = np.unique(keys, axis=0, return_inverse=True)
    m = len(uniq)
    counts = np.bincount(assignment, minlength=m).astype(np.float64)
    centroids = np.zeros((m, 3))
    np.add.at(centroids, assignment, points)
    centroids /= counts[:, None]
    pooled = None
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        pooled = np.zeros((m, features.shape[1]))
        np.add.at(pooled, assignment, features)
        pooled /= counts[:, None]
    return centroids, pooled, assignment


def _pooling_matrix(assignment, n_out):
    n_in = len(assignment)
    counts = np.bincount(assignment, minlength=n_out).astype(np.float64)
    vals = 1.0 / counts[assignment]
    return sp.csr_matrix((vals, (assignment, np.arange(n_in))), shape=(n_out, n_in))


def build_influence_matrices(queries, supports, radius, sigma=None):
    """Per-kernel-point sparse influence matrices for one KPConv layer.

    Influence of support q on query p through kernel point k is
    max(0, 1 - |(q - p) - kappa_k| / sigma) for neighbors within `radius`;
    kernel points sit at the origin and on a shell of radius `sigma`.
    """
    if sigma is None:
        sigma = radius / 2.0
    kernels = KERNEL_POINTS * sigma
    tree = cKDTree(supports)
    neigh = tree.query_ball_point(queries, radius)
    rows = np.concatenate([np.full(len(ns), i, dtype=np.intp) for i, ns in enumerate(neigh)]) if len(queries) else np.zeros(0, np.intp)
    cols = np.concatenate([np.asarray(ns, dtype=np.intp) for ns in neigh]) if len(queries) else np.zeros(0, np.intp)
    shape = (len(queries), len(supports))
    if len(rows) == 0:
        return [sp.csr_matrix(shape) for _ in range(N_KERNEL)]
    diffs = supports[cols] - queries[rows]
    mats = []
    for k in range(N_KERNEL):
        dist = np.linalg.norm(diffs - kernels[k], axis=1)
        infl = np.maximum(0.0, 1.0 - dist / sigma)
        nz = infl > 0
        mats.append(sp.csr_matrix((infl[nz], (rows[nz], cols[nz])), shape=shape))
    return mats


def kpconv_layer(mats, features, weight, bias, activation=T.relu):
    """Apply one KPConv layer.

    `mats`: per-kernel influence matrices; `features`: Tensor (N_in, C_in);
    `weight`: Tensor (K, C_in, C_out); `bias`: Tensor (C_out,).
    """
    acc = None
    for k, mat in enumerate(mats):
        if mat.nnz == 0:
            continue
        term = T.matmul(T.spmm(mat, features), weight[k])
        acc = term if acc is None else acc + term
    if acc is None:
        acc = T.Tensor(np.zeros((mats[0].shape[0], weight.shape[2])))
    out = acc + bias
    return activation(out) if activation is not None else out


@dataclass
class SceneEncoding:
    points: np.ndarray  # (N_g, 3) final-stage centroids
    features: "T.Tensor"  # (N_g, C_c)
    stage_trace: list  # per-stage point counts


@dataclass
class ScenePlan:
    """Geometry-only encoding structure, reusable across training steps."""

    stages: list  # per stage: dict(conv_mats1, conv_mats2, pool, points_out)
    points_out: np.ndarray
    stage_trace: list
    in_points: np.ndarray


def default_base_cell(positions, cfg):
    if cfg.base_cell is not None:
        return cfg.base_cell
    diag = float(np.linalg.norm(positions.max(axis=0) - positions.min(axis=0)))
    if diag == 0:
        raise EncoderConfigError("degenerate scene: zero bounding-box diagonal")
    return diag / cfg.base_cell_divisor


def build_scene_plan(positions, cfg):
    positions = np.asarray(positions, dtype=np.float64)
    cell = default_base_cell(positions, cfg)
    pts = positions
    stages = []
    trace = [len(pts)]
    for _s in range(len(cfg.channels)):
        radius = cfg.radius_factor * cell
        mats = build_influence_matrices(pts, pts, radius)
        centroids, _, assignment = grid_downsample(pts, None, cell)
        pool = _pooling_matrix(assignment, len(centroids))
        stages.append({"conv_mats": mats, "pool": pool, "points_out": centroids})
        pts = centroids
        trace.append(len(pts))
        cell *= cfg.cell_factor
    if len(pts) < cfg.min_points:
        raise EncoderConfigError(
            f"scene too small to survive downsampling ({len(pts)} points remain); adjust the base grid cell"
        )
    return ScenePlan(stages=stages, points_out=pts, stage_trace=trace, in_points=positions)


def init_params(params, rng, cfg, prefix="enc3d"):
    c_prev = cfg.in_channels
    for s, c_out in enumerate(cfg.channels, start=1):
        for layer, (ci, co) in enumerate([(c_prev, c_out), (c_out, c_out)], start=1):
            w = np.stack([glorot(rng, ci, co) for _ in range(N_KERNEL)])
            params.add(f"{prefix}.stage{s}.layer{layer}.w", w / N_KERNEL)
            params.add(f"{prefix}.stage{s}.layer{layer}.b", np.zeros(co))
        c_prev = c_out


def encode_scene_with_plan(plan, features, params, cfg, prefix="enc3d"):
    """Run the learned encoder over a prebuilt scene plan.

    `features`: Tensor or array (N, in_channels) from gaussian_input_features.
    """
    f = features if isinstance(features, T.Tensor) else T.Tensor(features)
    for s, stage in enumerate(plan.stages, start=1):
        for layer in (1, 2):
            w = params[f"{prefix}.stage{s}.layer{layer}.w"]
            b = params[f"{prefix}.stage{s}.layer{layer}.b"]
            f = kpconv_layer(stage["conv_mats"], f, w, b)
        f = T.spmm(stage["pool"], f)
    return SceneEncoding(points=plan.points_out, features=f, stage_trace=plan.stage_trace)


def encode_scene(positions, features, params, cfg, prefix="enc3d"):
    plan = build_scene_plan(positions, cfg)
    return encode_scene_with_plan(plan, features, params, cfg, prefix)
