"""Renderer checks: SH basis cases, single-Gaussian peak and depth,
occlusion ordering, alpha behavior, and tiled-vs-untiled bit equality."""

import numpy as np

from splatloc.geometry import CameraIntrinsics, Pose, project
from splatloc.renderer import SH_C0, SH_C1, eval_sh, render, render_tile_parallel
from splatloc.scene_io import GaussianScene

K = CameraIntrinsics(80.0, 80.0, 31.5, 31.5, 64, 64)


def make_scene(positions, colors, scale=0.05, opacity_logit=8.0, rng=None):
    n = len(positions)
    sh = np.zeros((n, 48))
    sh[:, :3] = (np.asarray(colors, dtype=np.float64) - 0.5) / SH_C0
    quats = np.tile([1.0, 0, 0, 0], (n, 1))
    if rng is not None:
        quats = rng.normal(size=(n, 4))
    return GaussianScene(
        positions=np.asarray(positions, dtype=np.float64),
        rotations=quats,
        log_scales=np.full((n, 3), np.log(scale)),
        opacity_logits=np.full(n, float(opacity_logit)),
        sh=sh,
    )


def test_sh_degree0_is_constant():
    coeffs = np.zeros(48)
    coeffs[:3] = [0.2, -0.1, 0.4]
    for d in ([0, 0, 1], [1, 0, 0], [0.577, 0.577, 0.577]):
        rgb = eval_sh(coeffs, d)
        assert np.allclose(rgb, np.clip(SH_C0 * coeffs[:3] + 0.5, 0, 1))


def test_sh_degree1_z_band():
    # channel-0 coefficient on the z band: basis value is SH_C1 * z
    coeffs = np.zeros(48)
    coeffs[3 + 1] = 1.0  # rest index 1 of channel 0
    up = eval_sh(coeffs, [0, 0, 1])
    down = eval_sh(coeffs, [0, 0, -1])
    assert np.isclose(up[0], np.clip(SH_C1 + 0.5, 0, 1))
    assert np.isclose(down[0], np.clip(-SH_C1 + 0.5, 0, 1))
    assert np.isclose(up[1], 0.5) and np.isclose(up[2], 0.5)


def test_sh_batched_matches_single(rng):
    coeffs = rng.normal(size=48) * 0.2
    dirs = rng.normal(size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    batched = eval_sh(coeffs, dirs)
    for i, d in enumerate(dirs):
        assert np.allclose(batched[i], eval_sh(coeffs, d))


def test_single_gaussian_peak_and_depth():
    pos = np.array([[0.07, -0.04, 2.3]])
    scene = make_scene(pos, [[0.9, 0.1, 0.1]])
    out = render(scene, Pose.identity(), K)
    px, z = project(pos[0], Pose.identity(), K)
    iy, ix = np.unravel_index(np.argmax(out.alpha), out.alpha.shape)
    assert np.hypot(ix - px[0], iy - px[1]) <= 0.5 + np.sqrt(0.5)  # peak pixel contains the projection
    assert abs(out.depth[iy, ix] - z) / z < 0.01
    assert out.color[iy, ix, 0] > out.color[iy, ix, 2]


def test_occlusion_front_gaussian_wins():
    scene = make_scene(
        [[0.0, 0.0, 2.0], [0.0, 0.0, 4.0]],
        [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
        scale=0.08,
        opacity_logit=12.0,
    )
    out = render(scene, Pose.identity(), K)
    center = out.color[31, 31]
    assert center[0] > 0.9 and center[2] < 0.1
    # expected depth blends a sliver of the rear splat through the 0.99
    # alpha clamp, so it sits just behind the front surface
    d = out.depth[31, 31]
    assert 2.0 <= d < 2.1


def test_behind_camera_not_rendered():
    scene = make_scene([[0.0, 0.0, -2.0]], [[1.0, 0, 0]])
    out = render(scene, Pose.identity(), K)
    assert out.alpha.max() == 0.0
    assert out.depth.max() == 0.0


def test_alpha_monotonic_in_opacity():
    lo = make_scene([[0, 0, 2.0]], [[0.5, 0.5, 0.5]], opacity_logit=-1.0)
    hi = make_scene([[0, 0, 2.0]], [[0.5, 0.5, 0.5]], opacity_logit=3.0)
    a_lo = render(lo, Pose.identity(), K).alpha
    a_hi = render(hi, Pose.identity(), K).alpha
    assert a_hi.max() > a_lo.max()
    covered = a_lo > 1e-6
    assert np.all(a_hi[covered] >= a_lo[covered])


def test_alpha_bounded():
    scene = make_scene([[0, 0, 2.0]] * 10, [[1, 1, 1]] * 10, opacity_logit=20.0)
    out = render(scene, Pose.identity(), K)
    assert out.alpha.max() <= 1.0
    assert out.color.max() <= 1.0 and out.color.min() >= 0.0


def test_tiled_matches_untiled_bitwise(rng):
    n = 40
    scene = make_scene(
        rng.uniform(-0.8, 0.8, size=(n, 3)) + [0, 0, 3.0],
        rng.uniform(0, 1, size=(n, 3)),
        scale=0.1,
        opacity_logit=2.0,
        rng=rng,
    )
    pose = Pose([0.9, 0.1, -0.2, 0.05], [0.1, -0.05, 0.2])
    a = render(scene, pose, K)
    for tile in (8, 17, 32):
        b = render_tile_parallel(scene, pose, K, tile=tile)
        assert np.array_equal(a.color, b.color)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.alpha, b.alpha)
    c = render_tile_parallel(scene, pose, K, tile=16, threads=4)
    assert np.array_equal(a.color, c.color)
    assert np.array_equal(a.depth, c.depth)


def test_render_at_override_size():
    scene = make_scene([[0, 0, 2.0]], [[1, 0, 0]])
    out = render(scene, Pose.identity(), K, size=(32, 48))
    assert out.color.shape == (32, 48, 3)
    assert out.depth.shape == (32, 48)


def test_empty_scene_renders_black():
    scene = make_scene(np.zeros((0, 3)), np.zeros((0, 3)))
    out = render(scene, Pose.identity(), K)
    assert out.color.shape == (64, 64, 3)
    assert out.color.max() == 0.0 and out.alpha.max() == 0.0
