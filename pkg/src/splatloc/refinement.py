"""Render-match-lift pose refinement and the end-to-end localize pipeline.

Each refinement round renders the scene at the current pose estimate,
matches the query against the render in 2D (NCC patch matcher by default,
or the trained matcher in image-vs-image mode), lifts render pixels to 3D
through the rendered depth, and re-solves PnP+RANSAC. A round is adopted
only if its RANSAC inlier count on the round's correspondences is at
least that of the incumbent pose; failed rounds keep the previous pose.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import matching
from .geometry import backproject, project_many
from .pose_solver import NoConsensusError, ransac_pnp
from .renderer import render


def _gray(image):
    return np.asarray(image, dtype=np.float64).mean(axis=2)


def _normalized_windows(gray, patch):
    """All zero-mean, unit-norm patch windows, indexed by top-left corner."""
    win = sliding_window_view(gray, (patch, patch))
    win = win - win.mean(axis=(2, 3), keepdims=True)
    norm = np.sqrt((win**2).sum(axis=(2, 3), keepdims=True))
    return win / np.maximum(norm, 1e-12)


def _parabolic(sm, s0, sp):
    """Subpixel offset of a 1D quadratic peak through three samples."""
    denom = sm - 2.0 * s0 + sp
    if denom >= -1e-12:
        return 0.0
    return float(np.clip(0.5 * (sm - sp) / denom, -0.5, 0.5))


def _best_offset(pn, windows, cy, cx, search, subpixel=False):
    """Best NCC offset of patch `pn` in `windows` around top-left (cy, cx).

    Returns (dy, dx, score) with integer offsets, plus (sub_dy, sub_dx)
    from parabolic peak interpolation when `subpixel` is set.
    """
    hmax, wmax = windows.shape[:2]
    y0, y1 = max(cy - search, 0), min(cy + search + 1, hmax)
    x0, x1 = max(cx - search, 0), min(cx + search + 1, wmax)
    if y0 >= y1 or x0 >= x1:
        return None
    scores = np.einsum("ij,abij->ab", pn, windows[y0:y1, x0:x1])
    flat = int(scores.argmax())
    dy, dx = divmod(flat, scores.shape[1])
    if not subpixel:
        return y0 + dy - cy, x0 + dx - cx, float(scores[dy, dx])
    sub_dy = sub_dx = 0.0
    if 0 < dy < scores.shape[0] - 1:
        sub_dy = _parabolic(scores[dy - 1, dx], scores[dy, dx], scores[dy + 1, dx])
    if 0 < dx < scores.shape[1] - 1:
        sub_dx = _parabolic(scores[dy, dx - 1], scores[dy, dx], scores[dy, dx + 1])
    return y0 + dy - cy, x0 + dx - cx, float(scores[dy, dx]), sub_dy, sub_dx


def dense_match_2d2d(query, rendered, method="ncc", cfg=None, model_ctx=None):
    """Dense 2D-2D matches between equal-size images.

    Returns a list of (query_pixel (2,), render_pixel (2,), score).
    `query` and `rendered` are (H, W, 3) arrays in [0, 1].
    """
    if query.shape != rendered.shape:
        raise ValueError(f"image sizes differ: {query.shape} vs {rendered.shape}")
    if method == "model":
        return _model_match(query, rendered, model_ctx)
    from .config import RefineConfig

    cfg = cfg or RefineConfig()
    patch, search, stride, thr = cfg.ncc_patch, cfg.ncc_search, cfg.ncc_stride, cfg.ncc_threshold
    half = patch // 2
    h, w = query.shape[:2]
    qw = _normalized_windows(_gray(query), patch)
    rw = _normalized_windows(_gray(rendered), patch)
    margin = half + search
    out = []
    for ry in range(margin, h - margin, stride):
        for rx in range(margin, w - margin, stride):
            fwd = _best_offset(rw[ry - half, rx - half], qw, ry - half, rx - half, search, subpixel=True)
            if fwd is None or fwd[2] < thr:
                continue
            dy, dx, score, sub_dy, sub_dx = fwd
            qy, qx = ry + dy, rx + dx
            if not (half <= qy < h - half and half <= qx < w - half):
                continue
            back = _best_offset(qw[qy - half, qx - half], rw, qy - half, qx - half, search)
            if back is None:
                continue
            by, bx, _ = back
            if abs(qy + by - ry) > 1 or abs(qx + bx - rx) > 1:
                continue
            out.append(
                (np.array([qx + sub_dx, qy + sub_dy], dtype=np.float64), np.array([rx, ry], dtype=np.float64), score)
            )
    return out


def _model_match(query, rendered, model_ctx):
    """Image-vs-image mode of the trained matcher: the render's coarse
    features stand in for the scene stream (patch centers as flat 3D anchors)."""
    from . import alignment, encoder2d, encoder3d, pipeline

    if model_ctx is None:
        raise ValueError("model matcher needs (params, model_cfg)")
    params, cfg = model_ctx
    q_enc = encoder2d.encode_image(encoder2d.preprocess((query * 255).astype(np.uint8), cfg.enc2d), params, cfg.enc2d)
    r_enc = encoder2d.encode_image(encoder2d.preprocess((rendered * 255).astype(np.uint8), cfg.enc2d), params, cfg.enc2d)
    gh, gw = r_enc.coarse_grid
    centers = encoder2d.patch_centers(gh, gw)
    anchors3d = np.concatenate([centers, np.zeros((len(centers), 1))], axis=1)
    pseudo = encoder3d.SceneEncoding(points=anchors3d, features=r_enc.coarse, stage_trace=[len(centers)])
    aligned = alignment.align(pseudo, q_enc, params, cfg.align)
    _, coarse = matching.coarse_match(aligned, params, cfg.match)
    fine, _ = matching.fine_match(coarse, q_enc, aligned.scene, params, cfg.match)
    scale = query.shape[1] / cfg.enc2d.target_size
    out = []
    for m in fine:
        rc = centers[[c.patch_index for c in coarse if c.scene_index == m.scene_index][0]]
        out.append((m.pixel * scale, rc * scale, 1.0))
    return out


def lift_matches(matches, depth, alpha, pose0, K, alpha_floor=0.5):
    """Lift render pixels to 3D via the rendered depth at pose0."""
    out = []
    h, w = depth.shape
    for q, r, _score in matches:
        ix, iy = int(round(r[0])), int(round(r[1]))
        if not (0 <= ix < w and 0 <= iy < h):
            continue
        if alpha[iy, ix] < alpha_floor or depth[iy, ix] <= 0:
            continue
        X = backproject(r, float(depth[iy, ix]), pose0, K)
        out.append((X, q))
    return out


def _inlier_count(corrs, pose, K, inlier_px):
    pts3 = np.asarray([c[0] for c in corrs])
    pts2 = np.asarray([c[1] for c in corrs])
    px, _, valid = project_many(pts3, pose, K)
    err = np.linalg.norm(px - pts2, axis=1)
    err[~valid] = np.inf
    return int((err < inlier_px).sum())


def refine(query, pose0, scene, K, cfg, model_ctx=None):
    """Iterated render-match-lift-solve refinement.

    `query`: (H, W, 3) in [0, 1] at the resolution of K. Returns
    (final pose, per-iteration diagnostics list).
    """
    pose = pose0
    diags = []
    h, w = query.shape[:2]
    all_skipped = True
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        out = render(scene, pose, K, size=(h, w))
        matches = dense_match_2d2d(query, out.color, cfg.matcher, cfg, model_ctx)
        corrs = lift_matches(matches, out.depth, out.alpha, pose, K, cfg.alpha_floor)
        d = {"iteration": it, "matches": len(matches), "correspondences": len(corrs), "adopted": False}
        if len(corrs) >= cfg.min_matches:
            try:
                result = ransac_pnp(corrs, K, inlier_px=cfg.inlier_px, max_iters=cfg.ransac_iters, seed=cfg.seed + it)
                incumbent = _inlier_count(corrs, pose, K, cfg.inlier_px)
                cand = int(result.inlier_mask.sum())
                d.update(inliers=cand, incumbent_inliers=incumbent, rmse=result.reprojection_rmse)
                if cand >= max(incumbent, 4):
                    pose = result.pose
                    d["adopted"] = True
                    all_skipped = False
            except NoConsensusError:
                d["inliers"] = 0
        d["seconds"] = time.perf_counter() - t0
        diags.append(d)
    return pose, {"iterations": diags, "all_skipped": all_skipped}


@dataclass
class LocalizeResult:
    success: bool
    pose: object = None
    initial_pose: object = None
    diagnostics: dict = field(default_factory=dict)


def localize(query_image, prepared, params, K, model_cfg, refine_cfg, scene_encoding=None, seed=0, coarse_only=False):
    """Full pipeline: encode, align, match, solve, refine.

    `query_image`: 8-bit RGB array (any size; resized to the model's target).
    `K`: intrinsics of the original image (rescaled internally). The scene
    encoding may be passed in to amortize across queries.
    """
    from . import encoder2d, pipeline
    from .alignment import align as align_fn

    diagnostics = {"timings": {}}
    t0 = time.perf_counter()
    target = model_cfg.enc2d.target_size
    K_t = K.resized(target, target)
    norm = encoder2d.preprocess(query_image, model_cfg.enc2d)
    query01 = np.asarray(query_image, dtype=np.float64) / 255.0
    if query01.shape[:2] != (target, target):
        query01 = encoder2d.bilinear_resize(query01, target, target)

    if scene_encoding is None:
        scene_encoding = pipeline.encode_scene_cached(prepared, params, model_cfg)
    image_enc = encoder2d.encode_image(norm, params, model_cfg.enc2d)
    aligned = align_fn(scene_encoding, image_enc, params, model_cfg.align)
    _, coarse = matching.coarse_match(aligned, params, model_cfg.match)
    diagnostics["coarse_matches"] = len(coarse)
    if coarse_only:
        fine, dropped = [], 0
    else:
        fine, dropped = matching.fine_match(coarse, image_enc, aligned.scene, params, model_cfg.match)
    diagnostics["fine_matches"] = len(fine)
    diagnostics["fine_dropped"] = dropped
    corrs = matching.matches_to_correspondences(fine)
    if len(corrs) < 4:
        corrs = matching.coarse_to_correspondences(coarse)
        diagnostics["fallback_coarse_corrs"] = True
    diagnostics["match_pixels"] = [np.asarray(c[1]) for c in corrs]
    diagnostics["timings"]["matching"] = time.perf_counter() - t0
    if len(corrs) < 4:
        diagnostics["failure"] = "fewer than 4 correspondences"
        return LocalizeResult(success=False, diagnostics=diagnostics)
    t1 = time.perf_counter()
    try:
        solve = ransac_pnp(corrs, K_t, inlier_px=refine_cfg.inlier_px, max_iters=refine_cfg.ransac_iters, seed=seed)
    except NoConsensusError:
        diagnostics["failure"] = "no RANSAC consensus at the initial solve"
        return LocalizeResult(success=False, diagnostics=diagnostics)
    diagnostics["initial_inliers"] = int(solve.inlier_mask.sum())
    diagnostics["initial_inlier_ratio"] = float(solve.inlier_mask.mean())
    diagnostics["timings"]["solve"] = time.perf_counter() - t1
    t2 = time.perf_counter()
    model_ctx = (params, model_cfg) if refine_cfg.matcher == "model" else None
    final, refine_diag = refine(query01, solve.pose, prepared.scene, K_t, refine_cfg, model_ctx)
    diagnostics["refinement"] = refine_diag
    diagnostics["timings"]["refine"] = time.perf_counter() - t2
    return LocalizeResult(success=True, pose=final, initial_pose=solve.pose, diagnostics=diagnostics)
