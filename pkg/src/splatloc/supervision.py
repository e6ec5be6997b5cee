"""Ground-truth match construction, the two matching losses, and training.

Ground truth comes from projecting the downsampled scene points with the
known pose: the patch a point lands in is its coarse match, the exact
projected pixel its fine target. A 3D point matches at most one patch;
a patch may hold many points. Patch membership uses half-open pixel
intervals so edge projections belong to the next patch.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import matching, tensor as T
from .encoder2d import PATCH, patch_center, preprocess
from .geometry import project_many
from .pipeline import forward


@dataclass
class GroundTruth:
    entries: np.ndarray  # (M, 2) of (patch_index i, scene_index j)
    fine_targets: dict  # scene_index -> (2,) projected pixel
    visible_mask: np.ndarray  # (N_g,) bool
    grid: tuple  # (rows, cols) of the coarse patch grid

    def __len__(self):
        return len(self.entries)

    def to_dense(self, n_g):
        rows, cols = self.grid
        m = np.zeros((rows * cols, n_g), dtype=bool)
        if len(self.entries):
            m[self.entries[:, 0], self.entries[:, 1]] = True
        return m


def gt_matches(points, gt_pose, K, patch=PATCH):
    """Project scene points and bin them into coarse patches."""
    px, z, valid = project_many(points, gt_pose, K)
    u, v = px[:, 0], px[:, 1]
    inside = valid & (u >= 0) & (u < K.width) & (v >= 0) & (v < K.height)
    cols_per_row = K.width // patch
    idx = np.flatnonzero(inside)
    i_patch = (np.floor(v[idx] / patch).astype(int) * cols_per_row + np.floor(u[idx] / patch).astype(int))
    entries = np.stack([i_patch, idx], axis=1) if len(idx) else np.zeros((0, 2), dtype=int)
    fine_targets = {int(j): px[j] for j in idx}
    mask = np.zeros(len(points), dtype=bool)
    mask[idx] = True
    return GroundTruth(entries=entries, fine_targets=fine_targets, visible_mask=mask, grid=(K.height // patch, cols_per_row))


def coarse_loss(scores, gt, n_scene=None):
    """Mean negative log of the dual-softmax score at GT entries.

    Returns None (skip-sample signal) when there are no GT matches.
    """
    if len(gt) == 0:
        return None
    S = scores.S if isinstance(scores, matching.ScoreMatrix) else scores
    n_g = S.shape[1]
    flat = gt.entries[:, 0] * n_g + gt.entries[:, 1]
    vals = T.clamp_min(T.take_flat(S, flat), 1e-12)
    return -T.tmean(T.log(vals))


def fine_loss(fine_matches, gt, var_floor=1e-6):
    """Variance-weighted mean pixel distance; the 1/variance weight carries
    no gradient. Returns None when no match pairs with a GT target."""
    terms = []
    for m in fine_matches:
        target = gt.fine_targets.get(int(m.scene_index))
        if target is None:
            continue
        d = m.pixel_t - T.Tensor(target)
        dist = T.sqrt(T.tsum(d * d) + 1e-12)
        weight = 1.0 / max(float(m.variance), var_floor)
        terms.append(dist * weight)
    if not terms:
        return None
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def total_loss(lc, lf):
    """L = L_c + L_f with skip-signals (None) propagating."""
    if lc is None and lf is None:
        return None
    if lc is None:
        return lf
    if lf is None:
        return lc
    return lc + lf


def teacher_forced_coarse(gt, points, rng=None, max_pairs=None):
    """GT coarse pairs as CoarseMatch records (fine training uses GT windows)."""
    entries = gt.entries
    if max_pairs is not None and len(entries) > max_pairs:
        sel = (rng or np.random.default_rng(0)).choice(len(entries), size=max_pairs, replace=False)
        entries = entries[np.sort(sel)]
    rows, cols = gt.grid
    out = []
    for i, j in entries:
        r, c = divmod(int(i), cols)
        out.append(
            matching.CoarseMatch(
                patch_index=int(i), scene_index=int(j), score=1.0, patch_center=patch_center(r, c), scene_point=points[j]
            )
        )
    return out


@dataclass
class TrainScene:
    prepared: object  # pipeline.PreparedScene
    images: list  # preprocessed (H, W, 3) arrays
    poses: list
    K: object  # CameraIntrinsics matching the preprocessed size


def training_step(ts, img_idx, params, cfg, train_cfg, rng):
    """One forward/backward/update on (scene, image). Returns loss or None."""
    pose = ts.poses[img_idx]
    _, image_enc, aligned, scores = forward(ts.prepared, ts.images[img_idx], params, cfg)
    gt = gt_matches(aligned.scene_points, pose, ts.K)
    lc = coarse_loss(scores, gt)
    lf = None
    if not train_cfg.coarse_only and len(gt):
        forced = teacher_forced_coarse(gt, aligned.scene_points, rng, train_cfg.max_fine_pairs)
        fine, _ = matching.fine_match(forced, image_enc, aligned.scene, params, cfg.match)
        lf = fine_loss(fine, gt)
    loss = total_loss(lc, lf)
    if loss is None:
        return None
    value = loss.item()
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite loss {value} (image {img_idx}, step {params.step + 1})")
    params.zero_grad()
    T.backward(loss, leaves=params.tensors())
    params.adam_step(lr=train_cfg.lr)
    return value


def train(scenes, params, cfg, train_cfg, out_dir=None, log=None):
    """Seeded epoch-shuffled training loop over (scene, image) samples.

    `scenes`: list of TrainScene. Returns the per-step loss log.
    """
    rng = np.random.default_rng(train_cfg.seed)
    samples = [(si, ii) for si, ts in enumerate(scenes) for ii in range(len(ts.images))]
    losses = []
    step = 0
    done = False
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(samples))
        for k in order:
            si, ii = samples[k]
            value = training_step(scenes[si], ii, params, cfg, train_cfg, rng)
            if value is not None:
                losses.append(value)
            step += 1
            if log and step % train_cfg.log_every == 0:
                log(f"step {step} epoch {epoch + 1} loss {value}")
            if train_cfg.max_steps is not None and step >= train_cfg.max_steps:
                done = True
                break
        if out_dir and (epoch + 1) % train_cfg.checkpoint_every == 0:
            params.save(os.path.join(out_dir, f"checkpoint_e{epoch + 1:04d}.params"))
        if done:
            break
    if out_dir:
        params.save(os.path.join(out_dir, "model.params"))
    return losses


def load_training_scene(scene_dir, cfg, opacity_threshold=0.9, max_gaussians=100_000, seed=0):
    """Load one training-manifest directory.

    Layout: ``scene.ply``, ``intrinsics.txt``, ``poses.txt``, ``images/``
    (sorted order pairs images with pose lines).
    """
    from . import scene_io
    from .encoder2d import load_image
    from .geometry import load_intrinsics, load_poses
    from .pipeline import PreparedScene

    scene = scene_io.load_ply(os.path.join(scene_dir, "scene.ply"))
    K = load_intrinsics(os.path.join(scene_dir, "intrinsics.txt"))
    poses = load_poses(os.path.join(scene_dir, "poses.txt"))
    img_dir = os.path.join(scene_dir, "images")
    files = sorted(f for f in os.listdir(img_dir) if f.lower().endswith((".png", ".ppm")))
    if len(files) != len(poses):
        raise ValueError(f"{scene_dir}: {len(files)} images but {len(poses)} poses")
    target = cfg.enc2d.target_size
    images = [preprocess(load_image(os.path.join(img_dir, f)), cfg.enc2d) for f in files]
    K_resized = K.resized(target, target)
    prepared = PreparedScene.prepare(scene, cfg, opacity_threshold, max_gaussians, seed)
    return TrainScene(prepared=prepared, images=images, poses=poses, K=K_resized)
