"""Forward EWA splatting of Gaussian scenes: color, expected depth, alpha.

Follows the standard splat-rasterizer conventions: world covariance
R diag(exp(s))^2 R^T, screen-space covariance J W Sigma W^T J^T plus a
0.3-pixel dilation, 3-sigma bounding boxes, front-to-back alpha
compositing with a global depth sort, per-splat alpha clamped at 0.99.
Not differentiable; the training path never needs gradients through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Z_MIN, quat_to_matrix

# Real spherical-harmonic basis constants, degrees 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

ALPHA_CLAMP = 0.99
COV_DILATION = 0.3


@dataclass
class RenderOutput:
    color: np.ndarray  # (H,W,3) in [0,1]
    depth: np.ndarray  # (H,W) alpha-weighted expected depth, 0 where uncovered
    alpha: np.ndarray  # (H,W) accumulated opacity
    skipped: int = 0  # Gaussians dropped for singular screen covariance


def eval_sh(coeffs, view_dir):
    """Evaluate degree-3 SH radiance for one Gaussian.

    `coeffs`: 48 values, 3 DC then 45 higher-order channel-major (15 per
    channel). `view_dir` may be (3,) or (N,3) unit directions. Returns RGB
    shifted by +0.5 and clamped to [0,1].
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    d = np.asarray(view_dir, dtype=np.float64)
    single = d.ndim == 1
    d = d.reshape(-1, 3)
    x, y, z = d[:, 0], d[:, 1], d[:, 2]
    # per-channel coefficient matrix (3, 16)
    c = np.empty((3, 16))
    c[:, 0] = coeffs[:3]
    for ch in range(3):
        c[ch, 1:] = coeffs[3 + 15 * ch : 3 + 15 * (ch + 1)]

    basis = np.empty((d.shape[0], 16))
    basis[:, 0] = SH_C0
    basis[:, 1] = -SH_C1 * y
    basis[:, 2] = SH_C1 * z
    basis[:, 3] = -SH_C1 * x
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    basis[:, 4] = SH_C2[0] * xy
    basis[:, 5] = SH_C2[1] * yz
    basis[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
    basis[:, 7] = SH_C2[3] * xz
    basis[:, 8] = SH_C2[4] * (xx - yy)
    basis[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
    basis[:, 10] = SH_C3[1] * xy * z
    basis[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
    basis[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    basis[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
    basis[:, 14] = SH_C3[5] * z * (xx - yy)
    basis[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)

    rgb = np.clip(basis @ c.T + 0.5, 0.0, 1.0)
    return rgb[0] if single else rgb


def _prepare_splats(scene, pose, K, width, height):
    """Project every Gaussian and return depth-sorted splat records."""
    n = len(scene)
    if n == 0:
        return [], 0
    W = pose.R
    cam = scene.positions @ W.T + pose.t
    z = cam[:, 2]
    center = pose.camera_center()

    opacity = scene.activated_opacity()
    scales = np.exp(scene.log_scales)
    skipped = 0
    splats = []
    for i in np.argsort(z, kind="stable"):
        zi = z[i]
        if zi <= Z_MIN:
            continue
        Rg = quat_to_matrix(scene.rotations[i])
        cov3d = Rg @ np.diag(scales[i] ** 2) @ Rg.T
        xi, yi = cam[i, 0], cam[i, 1]
        J = np.array(
            [[K.fx / zi, 0.0, -K.fx * xi / zi**2], [0.0, K.fy / zi, -K.fy * yi / zi**2]]
        )
        cov2d = J @ W @ cov3d @ W.T @ J.T
        cov2d[0, 0] += COV_DILATION
        cov2d[1, 1] += COV_DILATION
        det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] * cov2d[1, 0]
        if det <= 1e-12 or not np.isfinite(det):
            skipped += 1
            continue
        conic = np.array([cov2d[1, 1], -cov2d[0, 1], cov2d[0, 0]]) / det
        mean2d = np.array([K.fx * xi / zi + K.cx, K.fy * yi / zi + K.cy])
        mid = 0.5 * (cov2d[0, 0] + cov2d[1, 1])
        lam = mid + np.sqrt(max(mid * mid - det, 0.0))
        radius = 3.0 * np.sqrt(lam)
        x0 = int(np.floor(mean2d[0] - radius))
        x1 = int(np.ceil(mean2d[0] + radius)) + 1
        y0 = int(np.floor(mean2d[1] - radius))
        y1 = int(np.ceil(mean2d[1] + radius)) + 1
        if x1 <= 0 or y1 <= 0 or x0 >= width or y0 >= height:
            continue
        view = scene.positions[i] - center
        nv = np.linalg.norm(view)
        rgb = eval_sh(scene.sh[i], view / nv if nv > 0 else np.array([0.0, 0.0, 1.0]))
        splats.append(
            {
                "mean": mean2d,
                "conic": conic,
                "alpha": opacity[i],
                "rgb": rgb,
                "z": zi,
                "bbox": (max(x0, 0), max(y0, 0), min(x1, width), min(y1, height)),
            }
        )
    return splats, skipped


def _composite_tile(splats, x0, y0, x1, y1):
    h, w = y1 - y0, x1 - x0
    color = np.zeros((h, w, 3))
    wz = np.zeros((h, w))
    acc = np.zeros((h, w))
    T = np.ones((h, w))
    xs = np.arange(x0, x1, dtype=np.float64)
    ys = np.arange(y0, y1, dtype=np.float64)
    for s in splats:
        bx0, by0, bx1, by1 = s["bbox"]
        cx0, cy0 = max(bx0, x0), max(by0, y0)
        cx1, cy1 = min(bx1, x1), min(by1, y1)
        if cx0 >= cx1 or cy0 >= cy1:
            continue
        sl = np.s_[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0]
        dx = xs[cx0 - x0 : cx1 - x0] - s["mean"][0]
        dy = ys[cy0 - y0 : cy1 - y0] - s["mean"][1]
        a, b, c = s["conic"]
        power = -0.5 * (a * dx[None, :] ** 2 + c * dy[:, None] ** 2) - b * dx[None, :] * dy[:, None]
        alpha = np.minimum(ALPHA_CLAMP, s["alpha"] * np.exp(power))
        contrib = T[sl] * alpha
        color[sl] += contrib[:, :, None] * s["rgb"]
        wz[sl] += contrib * s["z"]
        acc[sl] += contrib
        T[sl] = T[sl] * (1.0 - alpha)
    depth = wz / np.maximum(acc, 1e-12)
    depth[acc < 1e-6] = 0.0
    return color, depth, acc


def render(scene, pose, K, size=None):
    """Render the scene at `pose`; `size` is (height, width), default from K."""
    h, w = size if size is not None else (K.height, K.width)
    splats, skipped = _prepare_splats(scene, pose, K, w, h)
    color, depth, alpha = _composite_tile(splats, 0, 0, w, h)
    return RenderOutput(np.clip(color, 0.0, 1.0), depth, np.clip(alpha, 0.0, 1.0), skipped)


def render_tile_parallel(scene, pose, K, size=None, tile=32, threads=None):
    """Tiled render, bit-identical to `render` (per-pixel op order is unchanged)."""
    h, w = size if size is not None else (K.height, K.width)
    splats, skipped = _prepare_splats(scene, pose, K, w, h)
    color = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    alpha = np.zeros((h, w))

    tiles = [
        (x0, y0, min(x0 + tile, w), min(y0 + tile, h))
        for y0 in range(0, h, tile)
        for x0 in range(0, w, tile)
    ]

    def run(t):
        x0, y0, x1, y1 = t
        c, d, a = _composite_tile(splats, x0, y0, x1, y1)
        color[y0:y1, x0:x1] = c
        depth[y0:y1, x0:x1] = d
        alpha[y0:y1, x0:x1] = a

    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run, tiles))
    else:
        for t in tiles:
            run(t)
    return RenderOutput(np.clip(color, 0.0, 1.0), depth, np.clip(alpha, 0.0, 1.0), skipped)
