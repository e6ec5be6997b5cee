"""Coarse 3D-to-patch matching and coarse-to-fine subpixel refinement.

Coarse: both streams are projected to a shared space, L2-normalized, and
scored by dual-softmax of temperature-scaled cosine similarities; matches
are mutual nearest neighbors with score >= theta_c. Fine: a w x w window
of fine features around each matched patch is self-attended, scored
against the (linearly mapped) scene feature, and softmaxed into a
heatmap whose expectation gives the subpixel location and whose total
variance gives the uncertainty weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder2d import FINE_STRIDE, fine_cell_of_patch
from .params import glorot


@dataclass
class ScoreMatrix:
    S: "T.Tensor"  # (N_c, N_g) dual-softmax match probabilities
    raw: "T.Tensor"  # (N_c, N_g) cosine similarities


@dataclass
class CoarseMatch:
    patch_index: int
    scene_index: int
    score: float
    patch_center: np.ndarray  # (2,) pixels
    scene_point: np.ndarray  # (3,)


@dataclass
class FineMatch:
    scene_index: int
    scene_point: np.ndarray
    pixel: np.ndarray  # (2,) subpixel location (numpy view of `pixel_t`)
    variance: float  # total heatmap variance, pixels^2
    heatmap: np.ndarray  # (w, w) probabilities, debug
    pixel_t: "T.Tensor" = field(default=None, repr=False)  # (2,) with grad path
    variance_t: "T.Tensor" = field(default=None, repr=False)
    patch_index: int = -1


def init_params(params, rng, c_coarse, c_fine, prefix="match"):
    params.add(f"{prefix}.proj3d.w", glorot(rng, c_coarse, c_coarse))
    params.add(f"{prefix}.proj2d.w", glorot(rng, c_coarse, c_coarse))
    params.add(f"{prefix}.fine.scene.w", glorot(rng, c_coarse, c_fine))
    params.add(f"{prefix}.fine.scene.b", np.zeros(c_fine))
    from .alignment import init_attention_params

    init_attention_params(params, rng, c_fine, f"{prefix}.fine.attn", ff_expand=2)


def _l2_normalize_rows(x, eps=1e-12):
    sq = T.tsum(x * x, axis=1, keepdims=True)
    return x * T.power(sq + eps, -0.5)


def shared_space_scores(aligned, params, temperature, prefix="match"):
    """Cosine similarities and dual-softmax probabilities (image x scene)."""
    fm = _l2_normalize_rows(T.matmul(aligned.image, params[f"{prefix}.proj2d.w"]))
    fs = _l2_normalize_rows(T.matmul(aligned.scene, params[f"{prefix}.proj3d.w"]))
    raw = T.matmul(fm, T.transpose(fs))
    scaled = raw * (1.0 / temperature)
    S = T.softmax(scaled, axis=1) * T.softmax(scaled, axis=0)
    return ScoreMatrix(S=S, raw=raw)


def mutual_matches(S, theta_c):
    """Mutual-argmax pairs of a score matrix with score >= theta_c."""
    S = np.asarray(S)
    if S.size == 0:
        return []
    row_best = S.argmax(axis=1)
    col_best = S.argmax(axis=0)
    pairs = []
    for i, j in enumerate(row_best):
        if col_best[j] == i and S[i, j] >= theta_c:
            pairs.append((i, int(j)))
    return pairs


def coarse_match(aligned, params, cfg, prefix="match"):
    """Returns (ScoreMatrix, list of CoarseMatch)."""
    scores = shared_space_scores(aligned, params, cfg.temperature, prefix)
    matches = [
        CoarseMatch(
            patch_index=i,
            scene_index=j,
            score=float(scores.S.data[i, j]),
            patch_center=aligned.patch_centers[i],
            scene_point=aligned.scene_points[j],
        )
        for i, j in mutual_matches(scores.S.data, cfg.theta_c)
    ]
    return scores, matches


def _window_cells(patch_row, patch_col, w, fine_grid):
    """Fine-grid (u, v) cells of the w x w window, or None if out of bounds."""
    cu, cv = fine_cell_of_patch(patch_row, patch_col)
    half = w // 2
    fh, fw = fine_grid
    if cu - half < 0 or cv - half < 0 or cu + half >= fw or cv + half >= fh:
        return None
    us = np.arange(cu - half, cu + half + 1)
    vs = np.arange(cv - half, cv + half + 1)
    uu, vv = np.meshgrid(us, vs)
    return uu.ravel(), vv.ravel()


def fine_match(coarse_matches, image_encoding, aligned_scene, params, cfg, prefix="match"):
    """Refine coarse matches to subpixel locations with heatmap variance.

    `aligned_scene`: (N_g, C_c) Tensor of scene features (post-alignment).
    Returns (list of FineMatch, dropped_count).
    """
    from .alignment import attention_block

    w = cfg.window
    fh, fw = image_encoding.fine_grid
    gh, gw = image_encoding.coarse_grid
    c_fine = image_encoding.fine.shape[1]
    results = []
    dropped = 0
    for m in coarse_matches:
        prow, pcol = divmod(m.patch_index, gw)
        cells = _window_cells(prow, pcol, w, (fh, fw))
        if cells is None:
            dropped += 1
            continue
        uu, vv = cells
        flat = vv * fw + uu
        tokens = T.gather_rows(image_encoding.fine, flat)  # (w^2, C_f)
        tokens = attention_block(tokens, tokens, params, f"{prefix}.fine.attn", heads=1)
        scene_f = T.matmul(
            T.reshape(T.gather_rows(aligned_scene, [m.scene_index]), (1, -1)),
            params[f"{prefix}.fine.scene.w"],
        ) + params[f"{prefix}.fine.scene.b"]  # (1, C_f)
        logits = T.matmul(tokens, T.transpose(scene_f)) * (1.0 / np.sqrt(c_fine))  # (w^2, 1)
        heat = T.softmax(T.reshape(logits, (1, w * w)), axis=1)  # (1, w^2)
        pos = np.stack([FINE_STRIDE * uu + 0.5, FINE_STRIDE * vv + 0.5], axis=1)  # (w^2, 2) pixels
        pixel_t = T.reshape(T.matmul(heat, T.Tensor(pos)), (2,))
        d = T.Tensor(pos) - T.reshape(pixel_t.detach(), (1, 2))
        var_t = T.tsum(T.reshape(heat, (w * w, 1)) * (d * d))
        results.append(
            FineMatch(
                scene_index=m.scene_index,
                scene_point=m.scene_point,
                pixel=pixel_t.data,
                variance=float(var_t.data),
                heatmap=heat.data.reshape(w, w),
                pixel_t=pixel_t,
                variance_t=var_t,
                patch_index=m.patch_index,
            )
        )
    return results, dropped


def matches_to_correspondences(fine_matches):
    """(3D point, 2D pixel) pairs in input order."""
    return [(m.scene_point, m.pixel) for m in fine_matches]


def coarse_to_correspondences(coarse_matches):
    """Patch-center correspondences for the coarse-only regime."""
    return [(m.scene_point, m.patch_center) for m in coarse_matches]
