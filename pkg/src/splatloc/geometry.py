"""Pinhole camera model, SE(3) poses, projection, and pose-error metrics.

Conventions: poses are world-to-camera, ``x_cam = R @ x_world + t``;
quaternions are (w, x, y, z); pixel coordinates are continuous with
integer values at pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Z_MIN = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image bounds")

    def matrix(self):
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    def resized(self, target_w, target_h):
        """Intrinsics after a (possibly non-uniform) resize."""
        sx, sy = target_w / self.width, target_h / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, target_w, target_h)


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0:
        raise ValueError("zero quaternion")
    q = q / n
    return -q if q[0] < 0 else q


def quat_to_matrix(q):
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return quat_normalize(q)


class Pose:
    """World-to-camera rigid transform stored as unit quaternion + translation."""

    __slots__ = ("q", "t")

    def __init__(self, q, t):
        self.q = quat_normalize(q)
        self.t = np.asarray(t, dtype=np.float64).reshape(3)

    @classmethod
    def identity(cls):
        return cls([1, 0, 0, 0], [0, 0, 0])

    @classmethod
    def from_matrix(cls, R, t):
        return cls(matrix_to_quat(np.asarray(R)), t)

    @property
    def R(self):
        return quat_to_matrix(self.q)

    def compose(self, other):
        """self ∘ other: apply `other` first, then `self`."""
        R1, R2 = self.R, other.R
        return Pose.from_matrix(R1 @ R2, R1 @ other.t + self.t)

    def inverse(self):
        R = self.R
        return Pose.from_matrix(R.T, -R.T @ self.t)

    def camera_center(self):
        return -self.R.T @ self.t

    def apply(self, points):
        """Transform world points (..., 3) into camera coordinates."""
        return np.asarray(points) @ self.R.T + self.t

    def __repr__(self):
        return f"Pose(q={np.round(self.q, 5)}, t={np.round(self.t, 5)})"


def project(point, pose, K, z_min=Z_MIN):
    """Project one world point; returns (pixel, depth) or None if behind camera."""
    x, y, z = pose.apply(np.asarray(point, dtype=np.float64))
    if z <= z_min:
        return None
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy]), z


def project_many(points, pose, K, z_min=Z_MIN):
    """Vectorized projection. Returns (pixels (N,2), depths (N,), valid (N,))."""
    cam = pose.apply(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    z = cam[:, 2]
    valid = z > z_min
    zs = np.where(valid, z, 1.0)
    px = np.stack([K.fx * cam[:, 0] / zs + K.cx, K.fy * cam[:, 1] / zs + K.cy], axis=1)
    return px, z, valid


def backproject(pixel, depth, pose, K):
    """Inverse of project: pixel + depth at `pose` back to a world point."""
    if depth <= 0:
        raise ValueError(f"backproject requires depth > 0, got {depth}")
    u, v = pixel
    cam = np.array([(u - K.cx) * depth / K.fx, (v - K.cy) * depth / K.fy, depth])
    return pose.R.T @ (cam - pose.t)


def pose_error(est, gt):
    """(translation error between camera centers, rotation error in degrees)."""
    t_err = float(np.linalg.norm(est.camera_center() - gt.camera_center()))
    Rrel = est.R @ gt.R.T
    c = np.clip((np.trace(Rrel) - 1.0) / 2.0, -1.0, 1.0)
    return t_err, float(np.degrees(np.arccos(c)))


def recall(errors, t_thresh=0.05, r_thresh=5.0):
    if not errors:
        raise ValueError("recall of an empty error list")
    hits = sum(1 for t, r in errors if t <= t_thresh and r <= r_thresh)
    return hits / len(errors)


def median_errors(errors):
    """Component-wise lower median (even counts take the lower of the middle pair)."""
    if not errors:
        raise ValueError("median of an empty error list")

    def lower_median(vals):
        s = sorted(vals)
        return s[(len(s) - 1) // 2]

    return lower_median([e[0] for e in errors]), lower_median([e[1] for e in errors])


# -- sidecar file formats ----------------------------------------------------

def load_intrinsics(path):
    """One line: ``fx fy cx cy width height``."""
    vals = open(path).read().split()
    if len(vals) != 6:
        raise ValueError(f"{path}: expected 6 intrinsics values, got {len(vals)}")
    fx, fy, cx, cy = map(float, vals[:4])
    w, h = int(vals[4]), int(vals[5])
    return CameraIntrinsics(fx, fy, cx, cy, w, h)


def save_intrinsics(path, K):
    with open(path, "w") as f:
        f.write(f"{float(K.fx)!r} {float(K.fy)!r} {float(K.cx)!r} {float(K.cy)!r} {K.width} {K.height}\n")


def load_poses(path):
    """One pose per line: quaternion wxyz then translation xyz, world-to-camera."""
    poses = []
    for line in open(path):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 7:
            raise ValueError(f"{path}: expected 7 values per pose line, got {len(vals)}")
        poses.append(Pose(vals[:4], vals[4:]))
    return poses


def save_poses(path, poses):
    with open(path, "w") as f:
        for p in poses:
            f.write(" ".join(repr(float(v)) for v in [*p.q, *p.t]) + "\n")
