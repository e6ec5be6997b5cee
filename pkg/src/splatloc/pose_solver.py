"""Perspective-n-Point with RANSAC robustification.

The minimal solve seeds from OpenCV's EPnP (plus planar/P3P fallbacks for
4-point samples) and is polished with up to 10 Gauss-Newton iterations on
the reprojection error; the rotation is updated on the manifold via the
exponential map, so it stays orthonormal by construction. RANSAC is fully
deterministic given its seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .geometry import Pose, project_many


class DegenerateConfigError(RuntimeError):
    pass


class NoConsensusError(RuntimeError):
    pass


@dataclass
class SolveResult:
    pose: Pose
    inlier_mask: np.ndarray
    reprojection_rmse: float
    iterations_used: int


def _split(corrs):
    pts3 = np.asarray([c[0] for c in corrs], dtype=np.float64)
    pts2 = np.asarray([c[1] for c in corrs], dtype=np.float64)
    return pts3, pts2


def _rodrigues(w):
    R, _ = cv2.Rodrigues(np.asarray(w, dtype=np.float64).reshape(3, 1))
    return R


def _reproj_errors(pts3, pts2, pose, K):
    px, _, valid = project_many(pts3, pose, K)
    err = np.linalg.norm(px - pts2, axis=1)
    err[~valid] = np.inf
    return err


def _gauss_newton(pts3, pts2, R, t, K, iters=10):
    for _ in range(iters):
        cam = pts3 @ R.T + t
        z = cam[:, 2]
        if (z <= 1e-9).any():
            break
        u = K.fx * cam[:, 0] / z + K.cx
        v = K.fy * cam[:, 1] / z + K.cy
        r = np.stack([u - pts2[:, 0], v - pts2[:, 1]], axis=1).ravel()
        # d(pixel)/d(cam) and d(cam)/d(omega, dt) with R <- exp(omega) R
        n = len(pts3)
        J = np.zeros((2 * n, 6))
        rx = pts3 @ R.T  # cam - t
        A00 = K.fx / z
        A02 = -K.fx * cam[:, 0] / z**2
        A11 = K.fy / z
        A12 = -K.fy * cam[:, 1] / z**2
        for i in range(n):
            A = np.array([[A00[i], 0.0, A02[i]], [0.0, A11[i], A12[i]]])
            skew = np.array(
                [[0, -rx[i, 2], rx[i, 1]], [rx[i, 2], 0, -rx[i, 0]], [-rx[i, 1], rx[i, 0], 0]]
            )
            J[2 * i : 2 * i + 2, :3] = A @ (-skew)
            J[2 * i : 2 * i + 2, 3:] = A
        H = J.T @ J + 1e-12 * np.eye(6)
        g = J.T @ r
        try:
            delta = np.linalg.solve(H, -g)
        except np.linalg.LinAlgError:
            break
        R = _rodrigues(delta[:3]) @ R
        t = t + delta[3:]
        if np.linalg.norm(delta) < 1e-14:
            break
    return R, t


def pnp_minimal(corrs, K):
    """Closed-form EPnP seed + Gauss-Newton polish. Needs >= 4 points."""
    if len(corrs) < 4:
        raise ValueError(f"PnP needs at least 4 correspondences, got {len(corrs)}")
    pts3, pts2 = _split(corrs)
    centered = pts3 - pts3.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] < 1e-9 * max(sv[0], 1.0):
        raise DegenerateConfigError("3D points are (near-)collinear")

    Kmat = K.matrix()
    flags = [cv2.SOLVEPNP_EPNP]
    if len(corrs) == 4:
        flags += [cv2.SOLVEPNP_AP3P, cv2.SOLVEPNP_IPPE]
    best = None
    for flag in flags:
        try:
            if flag in (cv2.SOLVEPNP_AP3P,):
                ok, rvecs, tvecs = cv2.solveP3P(pts3[:3].reshape(-1, 1, 3), pts2[:3].reshape(-1, 1, 2), Kmat, None, flags=flag)
                candidates = list(zip(rvecs, tvecs)) if ok else []
            else:
                ok, rvec, tvec = cv2.solvePnP(pts3.reshape(-1, 1, 3), pts2.reshape(-1, 1, 2), Kmat, None, flags=flag)
                candidates = [(rvec, tvec)] if ok else []
        except cv2.error:
            candidates = []
        for rvec, tvec in candidates:
            R = _rodrigues(rvec)
            t = np.asarray(tvec, dtype=np.float64).reshape(3)
            R, t = _gauss_newton(pts3, pts2, R, t, K)
            pose = Pose.from_matrix(R, t)
            err = _reproj_errors(pts3, pts2, pose, K)
            score = np.sqrt(np.mean(np.minimum(err, 1e6) ** 2))
            if best is None or score < best[0]:
                best = (score, pose)
    if best is None:
        raise DegenerateConfigError("PnP minimal solve failed on this configuration")
    return best[1]


def ransac_pnp(corrs, K, inlier_px=3.0, max_iters=2000, confidence=0.999, seed=0):
    """Robust PnP: 4-point hypotheses, inlier counting, final re-solve.

    Deterministic given `seed`; best hypothesis by (inlier count, -rmse,
    earliest iteration).
    """
    n = len(corrs)
    if n < 4:
        raise ValueError(f"RANSAC PnP needs at least 4 correspondences, got {n}")
    pts3, pts2 = _split(corrs)
    rng = np.random.default_rng(seed)
    best_mask = None
    best_key = None
    iters_budget = max_iters
    it = 0
    while it < iters_budget:
        it += 1
        sample = rng.choice(n, size=4, replace=False)
        try:
            pose = pnp_minimal([corrs[i] for i in sample], K)
        except (DegenerateConfigError, ValueError):
            continue
        err = _reproj_errors(pts3, pts2, pose, K)
        mask = err < inlier_px
        count = int(mask.sum())
        if count < 4:
            continue
        rmse = float(np.sqrt(np.mean(err[mask] ** 2)))
        key = (count, -rmse)
        if best_key is None or key > best_key:
            best_key = key
            best_mask = mask
            w = count / n
            if w > 0:
                denom = np.log1p(-min(w**4, 1 - 1e-12))
                needed = int(np.ceil(np.log1p(-confidence) / denom)) if denom < 0 else max_iters
                iters_budget = min(max_iters, max(it, needed))
    if best_mask is None:
        raise NoConsensusError("RANSAC found no 4-inlier consensus")
    final = pnp_minimal([corrs[i] for i in np.flatnonzero(best_mask)], K)
    err = _reproj_errors(pts3, pts2, final, K)
    mask = err < inlier_px
    if mask.sum() < 4:
        mask = best_mask
        final = pnp_minimal([corrs[i] for i in np.flatnonzero(best_mask)], K)
        err = _reproj_errors(pts3, pts2, final, K)
    rmse = float(np.sqrt(np.mean(err[mask] ** 2))) if mask.any() else np.inf
    return SolveResult(pose=final, inlier_mask=mask, reprojection_rmse=rmse, iterations_used=it)
