"""Interleaved self- and cross-attention over scene and image features.

Sinusoidal positional encodings of the 3D point coordinates (min-max
normalized) and the 2D patch centers are added once before the first
layer. Within each layer the order is fixed: self(scene), self(image),
cross(scene<-image), cross(image<-scene). Post-norm residual blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import glorot

BLOCKS = ("self3d", "self2d", "cross3d", "cross2d")


@dataclass
class AlignedFeatures:
    scene: "T.Tensor"  # (N_g, C)
    image: "T.Tensor"  # (N_c, C)
    scene_points: np.ndarray  # (N_g, 3)
    patch_centers: np.ndarray  # (N_c, 2) pixel coordinates


def _sinusoid(values, dim):
    """(N,) scalar positions -> (N, dim) interleaved sin/cos bands."""
    n_freq = dim // 2
    freqs = 1.0 / (100.0 ** (np.arange(n_freq) / max(n_freq, 1)))
    ang = values[:, None] * freqs[None, :]
    out = np.zeros((len(values), dim))
    out[:, 0 : 2 * n_freq : 2] = np.sin(ang)
    out[:, 1 : 2 * n_freq : 2] = np.cos(ang)
    return out


def positional_encoding_2d(centers, dim):
    """Sinusoidal encoding of pixel-space patch centers, scaled to ~[0, 2pi]."""
    centers = np.asarray(centers, dtype=np.float64)
    half = dim // 2
    scale = 2.0 * np.pi / 64.0
    pe = np.zeros((len(centers), dim))
    pe[:, :half] = _sinusoid(centers[:, 0] * scale, half)
    pe[:, half : 2 * (dim // 2)] = _sinusoid(centers[:, 1] * scale, dim - half)
    return pe


def positional_encoding_3d(points, dim):
    """Sinusoidal encoding of min-max normalized 3D coordinates."""
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    span = np.maximum(points.max(axis=0) - lo, 1e-9)
    norm = (points - lo) / span * 2.0 * np.pi * 8.0
    third = dim // 3
    pe = np.zeros((len(points), dim))
    pe[:, :third] = _sinusoid(norm[:, 0], third)
    pe[:, third : 2 * third] = _sinusoid(norm[:, 1], third)
    pe[:, 2 * third : 3 * third] = _sinusoid(norm[:, 2], third)
    return pe


def init_attention_params(params, rng, dim, prefix, ff_expand=2):
    for name in ("wq", "wk", "wv", "wo"):
        params.add(f"{prefix}.{name}", glorot(rng, dim, dim))
    params.add(f"{prefix}.ln1.g", np.ones(dim))
    params.add(f"{prefix}.ln1.b", np.zeros(dim))
    params.add(f"{prefix}.ff.w1", glorot(rng, dim, dim * ff_expand))
    params.add(f"{prefix}.ff.b1", np.zeros(dim * ff_expand))
    params.add(f"{prefix}.ff.w2", glorot(rng, dim * ff_expand, dim))
    params.add(f"{prefix}.ff.b2", np.zeros(dim))
    params.add(f"{prefix}.ln2.g", np.ones(dim))
    params.add(f"{prefix}.ln2.b", np.zeros(dim))


def init_params(params, rng, dim, cfg, prefix="align"):
    if dim % cfg.heads:
        raise ValueError(f"feature dim {dim} not divisible by {cfg.heads} heads")
    for layer in range(1, cfg.layers + 1):
        for block in BLOCKS:
            init_attention_params(params, rng, dim, f"{prefix}.layer{layer}.{block}", cfg.ff_expand)


def attention_block(queries, keys_values, params, prefix, heads):
    """Multi-head scaled dot-product attention + FF, both with residual+LN."""
    n, dim = queries.shape
    if dim % heads:
        raise ValueError(f"feature dim {dim} not divisible by {heads} heads")
    dh = dim // heads

    def split(t):
        return T.transpose(T.reshape(t, (t.shape[0], heads, dh)), (1, 0, 2))

    q = split(T.matmul(queries, params[f"{prefix}.wq"]))
    k = split(T.matmul(keys_values, params[f"{prefix}.wk"]))
    v = split(T.matmul(keys_values, params[f"{prefix}.wv"]))
    scores = T.matmul(q, T.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    ctx = T.matmul(attn, v)  # (heads, N, dh)
    merged = T.reshape(T.transpose(ctx, (1, 0, 2)), (n, dim))
    x = T.layer_norm(queries + T.matmul(merged, params[f"{prefix}.wo"]), params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    ff = T.matmul(T.relu(T.matmul(x, params[f"{prefix}.ff.w1"]) + params[f"{prefix}.ff.b1"]), params[f"{prefix}.ff.w2"]) + params[f"{prefix}.ff.b2"]
    return T.layer_norm(x + ff, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


def align(scene_encoding, image_encoding, params, cfg, patch_center_fn=None, prefix="align"):
    """Run the interleaved attention stack over both feature streams."""
    from .encoder2d import patch_centers

    gh, gw = image_encoding.coarse_grid
    centers = patch_centers(gh, gw) if patch_center_fn is None else patch_center_fn(gh, gw)
    dim = scene_encoding.features.shape[1]
    if cfg.layers == 0:
        # no attention: features pass through untouched (positional codes
        # would only bias the cosine scores)
        return AlignedFeatures(
            scene=scene_encoding.features,
            image=image_encoding.coarse,
            scene_points=scene_encoding.points,
            patch_centers=centers,
        )
    scene = scene_encoding.features + T.Tensor(positional_encoding_3d(scene_encoding.points, dim))
    image = image_encoding.coarse + T.Tensor(positional_encoding_2d(centers, dim))
    for layer in range(1, cfg.layers + 1):
        p = f"{prefix}.layer{layer}"
        scene = attention_block(scene, scene, params, f"{p}.self3d", cfg.heads)
        image = attention_block(image, image, params, f"{p}.self2d", cfg.heads)
        scene = attention_block(scene, image, params, f"{p}.cross3d", cfg.heads)
        image = attention_block(image, scene, params, f"{p}.cross2d", cfg.heads)
    return AlignedFeatures(scene=scene, image=image, scene_points=scene_encoding.points, patch_centers=centers)
