"""Image encoder: resize against a scalar oracle, grid-coordinate
conventions, output shapes, and locality of the fine features."""

import numpy as np
import pytest

from splatloc import tensor as T
from splatloc.config import Encoder2DConfig
from splatloc.encoder2d import (
    bilinear_resize,
    encode_image,
    fine_cell_center,
    fine_cell_of_patch,
    init_params,
    patch_center,
    patch_centers,
    preprocess,
)
from splatloc.params import ModelParams


def bilinear_oracle(image, out_h, out_w):
    h, w = image.shape[:2]
    out = np.zeros((out_h, out_w) + image.shape[2:])
    for oy in range(out_h):
        for ox in range(out_w):
            sy = np.clip((oy + 0.5) * h / out_h - 0.5, 0, h - 1)
            sx = np.clip((ox + 0.5) * w / out_w - 0.5, 0, w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            out[oy, ox] = (
                image[y0, x0] * (1 - fy) * (1 - fx)
                + image[y0, x1] * (1 - fy) * fx
                + image[y1, x0] * fy * (1 - fx)
                + image[y1, x1] * fy * fx
            )
    return out


def test_bilinear_matches_oracle(rng):
    img = rng.uniform(0, 1, size=(13, 9, 3))
    for oh, ow in ((7, 7), (20, 16), (13, 9)):
        assert np.allclose(bilinear_resize(img, oh, ow), bilinear_oracle(img, oh, ow), atol=1e-12)


def test_bilinear_preserves_constant():
    img = np.full((10, 12, 3), 0.37)
    out = bilinear_resize(img, 24, 8)
    assert np.allclose(out, 0.37)


def test_grid_coordinate_conventions():
    assert np.array_equal(patch_center(0, 0), [3.5, 3.5])
    assert np.array_equal(patch_center(2, 5), [43.5, 19.5])
    assert np.array_equal(fine_cell_center(0, 0), [0.5, 0.5])
    assert np.array_equal(fine_cell_center(3, 7), [6.5, 14.5])
    assert fine_cell_of_patch(0, 0) == (1, 1)
    assert fine_cell_of_patch(2, 3) == (13, 9)
    # the anchored fine cell sits within one pixel of the patch center
    u, v = fine_cell_of_patch(2, 3)
    assert np.abs(fine_cell_center(u, v) - patch_center(2, 3)).max() <= 1.0


def test_patch_centers_row_major():
    grid = patch_centers(2, 3)
    assert grid.shape == (6, 2)
    assert np.array_equal(grid[0], [3.5, 3.5])
    assert np.array_equal(grid[1], [11.5, 3.5])  # next column first
    assert np.array_equal(grid[3], [3.5, 11.5])  # then next row


def test_preprocess_normalization(rng):
    cfg = Encoder2DConfig(target_size=16)
    img = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    out = preprocess(img, cfg)
    ref = (img.astype(np.float64) / 255.0 - 0.5) / 0.25
    assert np.allclose(out, ref)


def test_preprocess_resizes(rng):
    cfg = Encoder2DConfig(target_size=24)
    img = rng.integers(0, 256, size=(10, 17, 3), dtype=np.uint8)
    assert preprocess(img, cfg).shape == (24, 24, 3)


def test_preprocess_rejects_bad_shape():
    cfg = Encoder2DConfig(target_size=16)
    with pytest.raises(ValueError):
        preprocess(np.zeros((16, 16)), cfg)
    with pytest.raises(ValueError):
        preprocess(np.zeros((0, 16, 3)), cfg)


def small_cfg():
    return Encoder2DConfig(c_fine=4, c_coarse=6, widths=(5, 6, 7, 8), target_size=32)


def test_encode_shapes(rng):
    cfg = small_cfg()
    params = ModelParams()
    init_params(params, rng, cfg)
    img = rng.normal(size=(32, 32, 3))
    enc = encode_image(img, params, cfg)
    assert enc.coarse.shape == (16, 6)  # (32/8)^2 patches
    assert enc.fine.shape == (256, 4)  # (32/2)^2 cells
    assert enc.coarse_grid == (4, 4)
    assert enc.fine_grid == (16, 16)


def test_encode_rejects_unaligned_size(rng):
    cfg = small_cfg()
    params = ModelParams()
    init_params(params, rng, cfg)
    with pytest.raises(ValueError):
        encode_image(rng.normal(size=(30, 32, 3)), params, cfg)


def test_row_major_feature_order(rng):
    """Zeroing one coarse-grid cell of the input must perturb exactly the
    features near that cell, confirming row index = row * W/8 + col."""
    cfg = small_cfg()
    params = ModelParams()
    init_params(params, rng, cfg)
    img = rng.normal(size=(32, 32, 3))
    base = encode_image(img, params, cfg).coarse.data
    img2 = img.copy()
    r, c = 2, 3  # patch rows 16..23, cols 24..31
    img2[16:24, 24:32] = 0.0
    changed = np.abs(encode_image(img2, params, cfg).coarse.data - base).sum(axis=1) > 1e-9
    assert changed[r * 4 + c]


def test_fine_features_are_local(rng):
    """With 3x3 convs only in block 1, a fine feature sees < 8 input pixels;
    far-away edits must leave it untouched."""
    cfg = small_cfg()
    params = ModelParams()
    init_params(params, rng, cfg)
    img = rng.normal(size=(32, 32, 3))
    base = encode_image(img, params, cfg).fine.data
    img2 = img.copy()
    img2[20:, 20:] = 5.0
    out = encode_image(img2, params, cfg).fine.data
    # fine cell (1,1) covers input pixels around (2..4), far from the edit
    assert np.allclose(out[1 * 16 + 1], base[1 * 16 + 1], atol=1e-12)
    assert not np.allclose(out, base)


def test_constant_image_interior_fine_features_equal(rng):
    cfg = small_cfg()
    params = ModelParams()
    init_params(params, rng, cfg)
    enc = encode_image(np.full((32, 32, 3), 0.2), params, cfg)
    fine = enc.fine.data.reshape(16, 16, -1)
    interior = fine[2:-2, 2:-2]
    assert np.allclose(interior, interior[0, 0], atol=1e-10)


def test_gradients_reach_first_block(rng):
    cfg = small_cfg()
    params = ModelParams()
    init_params(params, rng, cfg)
    enc = encode_image(rng.normal(size=(32, 32, 3)), params, cfg)
    T.backward(T.tsum(enc.coarse) + T.tsum(enc.fine), leaves=params.tensors())
    for name in ("enc2d.block1.w1", "enc2d.head_fine.w", "enc2d.head_coarse.w"):
        assert np.abs(params[name].grad).max() > 0, name


def test_configurable_kernel_sizes(rng):
    cfg = Encoder2DConfig(c_fine=4, c_coarse=6, widths=(5, 6, 7, 8), kernels=(3, 3, 1, 1), target_size=32)
    params = ModelParams()
    init_params(params, rng, cfg)
    assert params["enc2d.block3.w1"].shape == (7, 6, 1, 1)
    enc = encode_image(rng.normal(size=(32, 32, 3)), params, cfg)
    assert enc.coarse.shape == (16, 6)
