"""Query-image encoder: coarse features at stride 8, fine features at stride 2.

The backbone is a small convolutional stack trained from scratch: three
stride-2 blocks, one stride-1 block at the 1/8 grid, with a fine head
tapped after block 1 and a coarse head after block 4. Coarse row i*Wc+j
covers the 8x8 pixel patch whose center is (8j+3.5, 8i+3.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from . import tensor as T
from .params import glorot

PATCH = 8
FINE_STRIDE = 2


@dataclass
class ImageEncoding:
    coarse: "T.Tensor"  # (H/8 * W/8, C_c), row-major over the coarse grid
    fine: "T.Tensor"  # (H/2 * W/2, C_f), row-major over the fine grid
    image_size: tuple  # (H, W)

    @property
    def coarse_grid(self):
        h, w = self.image_size
        return h // PATCH, w // PATCH

    @property
    def fine_grid(self):
        h, w = self.image_size
        return h // FINE_STRIDE, w // FINE_STRIDE


def patch_center(row, col):
    """Pixel coordinates (x, y) of the center of coarse patch (row, col)."""
    return np.array([PATCH * col + 3.5, PATCH * row + 3.5])


def patch_centers(grid_h, grid_w):
    """Centers for every coarse row index, row-major, shape (grid_h*grid_w, 2)."""
    jj, ii = np.meshgrid(np.arange(grid_w), np.arange(grid_h))
    return np.stack([PATCH * jj.ravel() + 3.5, PATCH * ii.ravel() + 3.5], axis=1).astype(np.float64)


def fine_cell_center(u, v):
    """Pixel coordinates (x, y) of fine-grid cell (u, v) = (col, row)."""
    return np.array([FINE_STRIDE * u + 0.5, FINE_STRIDE * v + 0.5])


def fine_cell_of_patch(row, col):
    """Fine-grid (col, row) anchoring the window for coarse patch (row, col)."""
    return 4 * col + 1, 4 * row + 1


def load_image(path):
    """8-bit RGB image as (H, W, 3) uint8. PNG and PPM supported."""
    img = Image.open(path).convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def save_image(path, array01):
    arr = np.clip(np.asarray(array01) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def bilinear_resize(image, out_h, out_w):
    """Half-pixel-center bilinear resampling of (H, W[, C]) float arrays."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    if image.ndim == 3:
        wy, wx = wy[..., None], wx[..., None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def preprocess(image, cfg):
    """Resize an 8-bit RGB image to the target square and normalize."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError(f"expected a nonempty HxWx3 image, got shape {image.shape}")
    t = cfg.target_size
    out = image.astype(np.float64) / 255.0
    if image.shape[:2] != (t, t):
        out = bilinear_resize(out, t, t)
    mean = np.asarray(cfg.mean)
    std = np.asarray(cfg.std)
    return (out - mean) / std


def init_params(params, rng, cfg, prefix="enc2d"):
    widths = cfg.widths
    c_prev = 3
    for b, (c, k) in enumerate(zip(widths, cfg.kernels), start=1):
        params.add(f"{prefix}.block{b}.w1", np.stack([glorot(rng, c_prev * k * k, c, (c_prev, k, k)) for _ in range(c)]))
        params.add(f"{prefix}.block{b}.b1", np.zeros(c))
        params.add(f"{prefix}.block{b}.w2", np.stack([glorot(rng, c * k * k, c, (c, k, k)) for _ in range(c)]))
        params.add(f"{prefix}.block{b}.b2", np.zeros(c))
        c_prev = c
    params.add(f"{prefix}.head_fine.w", np.stack([glorot(rng, widths[0], cfg.c_fine, (widths[0], 1, 1)) for _ in range(cfg.c_fine)]))
    params.add(f"{prefix}.head_fine.b", np.zeros(cfg.c_fine))
    params.add(f"{prefix}.head_coarse.w", np.stack([glorot(rng, widths[3], cfg.c_coarse, (widths[3], 1, 1)) for _ in range(cfg.c_coarse)]))
    params.add(f"{prefix}.head_coarse.b", np.zeros(cfg.c_coarse))


def _block(x, params, prefix, stride, kernel=3):
    pad = kernel // 2
    y = T.relu(T.conv2d(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"], stride=stride, padding=pad))
    return y + T.relu(T.conv2d(y, params[f"{prefix}.w2"], params[f"{prefix}.b2"], stride=1, padding=pad))


def encode_image(image, params, cfg, prefix="enc2d"):
    """Encode a preprocessed (H, W, 3) image into coarse and fine features."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if h % PATCH or w % PATCH:
        raise ValueError(f"image size {h}x{w} must be divisible by {PATCH}")
    k = cfg.kernels
    x = T.Tensor(image.transpose(2, 0, 1)[None])
    b1 = _block(x, params, f"{prefix}.block1", stride=2, kernel=k[0])
    b2 = _block(b1, params, f"{prefix}.block2", stride=2, kernel=k[1])
    b3 = _block(b2, params, f"{prefix}.block3", stride=2, kernel=k[2])
    b4 = _block(b3, params, f"{prefix}.block4", stride=1, kernel=k[3])
    fine = T.conv2d(b1, params[f"{prefix}.head_fine.w"], params[f"{prefix}.head_fine.b"])
    coarse = T.conv2d(b4, params[f"{prefix}.head_coarse.w"], params[f"{prefix}.head_coarse.b"])
    cf = cfg.c_fine
    cc = cfg.c_coarse
    fine_rows = T.reshape(T.transpose(fine, (0, 2, 3, 1)), (h // 2 * (w // 2), cf))
    coarse_rows = T.reshape(T.transpose(coarse, (0, 2, 3, 1)), (h // 8 * (w // 8), cc))
    return ImageEncoding(coarse=coarse_rows, fine=fine_rows, image_size=(h, w))
