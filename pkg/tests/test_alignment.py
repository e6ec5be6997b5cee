"""Attention blocks against a dense numpy oracle, equivariance properties,
and the interleaved alignment stack."""

import numpy as np
import pytest

from splatloc import tensor as T
from splatloc.alignment import (
    align,
    attention_block,
    init_attention_params,
    init_params,
    positional_encoding_2d,
    positional_encoding_3d,
)
from splatloc.config import AlignConfig
from splatloc.encoder2d import ImageEncoding
from splatloc.encoder3d import SceneEncoding
from splatloc.params import ModelParams


def np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def attention_oracle(q_in, kv_in, p, prefix, heads):
    """Dense numpy re-implementation of one attention + FF block."""
    n, dim = q_in.shape
    dh = dim // heads
    Q = q_in @ p[f"{prefix}.wq"].data
    K = kv_in @ p[f"{prefix}.wk"].data
    V = kv_in @ p[f"{prefix}.wv"].data
    ctx = np.zeros_like(Q)
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        s = Q[:, sl] @ K[:, sl].T / np.sqrt(dh)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        ctx[:, sl] = a @ V[:, sl]
    x = np_layer_norm(q_in + ctx @ p[f"{prefix}.wo"].data, p[f"{prefix}.ln1.g"].data, p[f"{prefix}.ln1.b"].data)
    ff = np.maximum(0, x @ p[f"{prefix}.ff.w1"].data + p[f"{prefix}.ff.b1"].data)
    ff = ff @ p[f"{prefix}.ff.w2"].data + p[f"{prefix}.ff.b2"].data
    return np_layer_norm(x + ff, p[f"{prefix}.ln2.g"].data, p[f"{prefix}.ln2.b"].data)


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_attention_block_matches_oracle(rng, heads):
    dim = 8
    params = ModelParams()
    init_attention_params(params, rng, dim, "blk")
    q = rng.normal(size=(5, dim))
    kv = rng.normal(size=(7, dim))
    out = attention_block(T.Tensor(q), T.Tensor(kv), params, "blk", heads=heads).data
    assert np.allclose(out, attention_oracle(q, kv, params, "blk", heads), atol=1e-10)


def test_attention_rejects_indivisible_heads(rng):
    params = ModelParams()
    init_attention_params(params, rng, 6, "blk")
    with pytest.raises(ValueError):
        attention_block(T.Tensor(np.zeros((2, 6))), T.Tensor(np.zeros((2, 6))), params, "blk", heads=4)


def test_self_attention_permutation_equivariance(rng):
    dim = 8
    params = ModelParams()
    init_attention_params(params, rng, dim, "blk")
    x = rng.normal(size=(6, dim))
    out = attention_block(T.Tensor(x), T.Tensor(x), params, "blk", heads=2).data
    perm = rng.permutation(6)
    out_p = attention_block(T.Tensor(x[perm]), T.Tensor(x[perm]), params, "blk", heads=2).data
    assert np.allclose(out_p, out[perm], atol=1e-10)


def test_cross_attention_kv_permutation_invariance(rng):
    dim = 8
    params = ModelParams()
    init_attention_params(params, rng, dim, "blk")
    q = rng.normal(size=(4, dim))
    kv = rng.normal(size=(9, dim))
    a = attention_block(T.Tensor(q), T.Tensor(kv), params, "blk", heads=2).data
    b = attention_block(T.Tensor(q), T.Tensor(kv[rng.permutation(9)]), params, "blk", heads=2).data
    assert np.allclose(a, b, atol=1e-10)


def test_positional_encoding_shapes_and_range():
    pe2 = positional_encoding_2d(np.array([[3.5, 3.5], [59.5, 11.5]]), 16)
    assert pe2.shape == (2, 16)
    assert np.abs(pe2).max() <= 1.0
    pe3 = positional_encoding_3d(np.random.default_rng(0).normal(size=(5, 3)), 12)
    assert pe3.shape == (5, 12)
    assert np.abs(pe3).max() <= 1.0


def test_positional_encoding_2d_distinguishes_positions():
    centers = np.array([[3.5, 3.5], [11.5, 3.5], [3.5, 11.5]])
    pe = positional_encoding_2d(centers, 32)
    assert not np.allclose(pe[0], pe[1])
    assert not np.allclose(pe[0], pe[2])
    # x and y occupy separate halves
    assert np.allclose(pe[0][16:], pe[1][16:])
    assert np.allclose(pe[0][:16], pe[2][:16])


def make_streams(rng, n_scene=7, hw=32, dim=8):
    scene = SceneEncoding(
        points=rng.uniform(-1, 1, size=(n_scene, 3)),
        features=T.Tensor(rng.normal(size=(n_scene, dim))),
        stage_trace=[n_scene],
    )
    n_patch = (hw // 8) ** 2
    image = ImageEncoding(
        coarse=T.Tensor(rng.normal(size=(n_patch, dim))),
        fine=T.Tensor(rng.normal(size=((hw // 2) ** 2, 4))),
        image_size=(hw, hw),
    )
    return scene, image


def test_align_output_shapes(rng):
    cfg = AlignConfig(layers=2, heads=2)
    params = ModelParams()
    init_params(params, rng, 8, cfg)
    scene, image = make_streams(rng)
    out = align(scene, image, params, cfg)
    assert out.scene.shape == (7, 8)
    assert out.image.shape == (16, 8)
    assert out.patch_centers.shape == (16, 2)
    assert np.array_equal(out.scene_points, scene.points)


def test_align_zero_layers_is_identity(rng):
    cfg = AlignConfig(layers=0)
    params = ModelParams()
    scene, image = make_streams(rng)
    out = align(scene, image, params, cfg)
    assert out.scene is scene.features
    assert out.image is image.coarse


def test_align_cross_terms_connect_streams(rng):
    """Perturbing the image stream must change the aligned scene features."""
    cfg = AlignConfig(layers=1, heads=2)
    params = ModelParams()
    init_params(params, rng, 8, cfg)
    scene, image = make_streams(rng)
    base = align(scene, image, params, cfg).scene.data.copy()
    image2 = ImageEncoding(
        coarse=T.Tensor(image.coarse.data + 1.0), fine=image.fine, image_size=image.image_size
    )
    moved = align(scene, image2, params, cfg).scene.data
    assert not np.allclose(base, moved)


def test_align_gradients_reach_all_blocks(rng):
    cfg = AlignConfig(layers=1, heads=2)
    params = ModelParams()
    init_params(params, rng, 8, cfg)
    scene, image = make_streams(rng)
    out = align(scene, image, params, cfg)
    T.backward(T.tsum(out.scene) + T.tsum(out.image), leaves=params.tensors())
    for block in ("self3d", "self2d", "cross3d", "cross2d"):
        g = params[f"align.layer1.{block}.wq"].grad
        assert np.abs(g).max() > 0, block
