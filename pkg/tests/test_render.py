from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from eventforge.geometry import CameraModel, Pose, relative_pose, yaw
from eventforge.losses import warp_horizontal
from eventforge.render import (
    SceneSpec,
    SparseVoxelScene,
    flow_from_depth,
    invert_size_confidence,
    make_test_scene,
    minmax_norm,
    render,
)


def brute_force_render(scene, pose, cam):
    """Per-pixel reference: test every voxel, sort by entry, composite without early stop."""
    H, W = cam.height, cam.width
    color = np.zeros((H, W, 3))
    depth = np.full((H, W), np.nan)
    resid = np.ones((H, W))
    for v in range(H):
        for u in range(W):
            d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
            d = pose.rotation @ d_cam
            o = pose.translation
            samples = []
            for k in range(len(scene)):
                lo = scene.centers[k] - scene.sizes[k] / 2
                hi = scene.centers[k] + scene.sizes[k] / 2
                tmin, tmax = -np.inf, np.inf
                for ax in range(3):
                    if d[ax] == 0:
                        if not lo[ax] <= o[ax] <= hi[ax]:
                            tmin, tmax = 1, 0
                        continue
                    a, b = (lo[ax] - o[ax]) / d[ax], (hi[ax] - o[ax]) / d[ax]
                    tmin, tmax = max(tmin, min(a, b)), min(tmax, max(a, b))
                entry = max(tmin, 0.0)
                if tmax >= entry and tmax > 0:
                    samples.append((entry, k))
            samples.sort()
            T = 1.0
            z = 0.0
            for entry, k in samples:
                a = scene.alphas[k]
                color[v, u] += T * a * scene.colors[k]
                z += T * a * entry
                T *= 1 - a
            if samples:
                depth[v, u] = z
            resid[v, u] = T
    return color, depth, resid


def single_pixel_cam():
    return CameraModel(10.0, 10.0, 2.0, 2.0, 5, 5)


def test_single_opaque_voxel():
    cam = single_pixel_cam()
    c = np.array([0.2, 0.5, 0.9])
    z0, s = 3.0, 0.5
    scene = SparseVoxelScene([[0, 0, z0 + s / 2]], [s], [1.0], [c])
    out = render(scene, Pose.identity(), cam)
    np.testing.assert_allclose(out.color[2, 2], c, atol=1e-12)
    assert out.depth[2, 2] == pytest.approx(z0, abs=1e-12)
    assert out.transmittance[2, 2] == 0.0


def test_two_voxel_hand_case():
    cam = single_pixel_cam()
    c1, c2 = np.array([1.0, 0.0, 0.2]), np.array([0.0, 1.0, 0.6])
    z1, z2, s = 1.0, 2.5, 0.2
    scene = SparseVoxelScene([[0, 0, z2 + s / 2], [0, 0, z1 + s / 2]], [s, s], [0.5, 0.5], [c2, c1])
    out = render(scene, Pose.identity(), cam)
    np.testing.assert_allclose(out.color[2, 2], 0.5 * c1 + 0.25 * c2, atol=1e-9)
    assert out.depth[2, 2] == pytest.approx(0.5 * z1 + 0.25 * z2, abs=1e-9)
    assert out.transmittance[2, 2] == pytest.approx(0.25, abs=1e-12)
    assert out.ao_sum[2, 2] == pytest.approx(1.0 * 0.5**2 + 0.5 * 0.5**2)
    assert out.size_sum[2, 2] == pytest.approx(1.0 * s + 0.5 * s)


def test_ray_missing_everything():
    cam = single_pixel_cam()
    scene = SparseVoxelScene([[0, 0, 2.1]], [0.05], [1.0], [[1, 1, 1]])
    out = render(scene, Pose.identity(), cam)
    assert np.isnan(out.depth[0, 0])
    assert out.conf_vsize[0, 0] == 0.0
    assert out.transmittance[0, 0] == 1.0


def test_empty_scene():
    cam = single_pixel_cam()
    out = render(SparseVoxelScene.empty(), Pose.identity(), cam)
    assert np.all(np.isnan(out.depth))
    assert np.all(out.transmittance == 1.0)
    assert np.all(out.color == 0) and np.all(out.conf_vsize == 0) and np.all(out.conf_ao == 0)


def test_matches_brute_force_reference():
    cam = CameraModel(20.0, 20.0, 7.5, 5.5, 16, 12)
    scene = make_test_scene(SceneSpec("random-boxes", seed=4, extent=2.0, voxel_size=0.2, boxes=4))
    pose = Pose(yaw(0.1), [0.05, -0.02, -0.3])
    out = render(scene, pose, cam)
    color, depth, resid = brute_force_render(scene, pose, cam)
    np.testing.assert_array_equal(np.isnan(out.depth), np.isnan(depth))
    ok = ~np.isnan(depth)
    np.testing.assert_allclose(out.depth[ok], depth[ok], atol=1e-3)
    np.testing.assert_allclose(out.color, color, atol=1e-3)
    np.testing.assert_allclose(out.transmittance, resid, atol=1e-4)


def test_partition_of_unity_random_scenes():
    cam = CameraModel(40.0, 40.0, 19.5, 14.5, 40, 30)
    for seed in range(10):
        scene = make_test_scene(SceneSpec("random-boxes", seed=seed, extent=2.0, voxel_size=0.15))
        out = render(scene, Pose.identity(), cam)
        np.testing.assert_allclose(out.weight_sum + out.transmittance, 1.0, atol=1e-6)
        assert out.weight_sum.max() <= 1 + 1e-9
        assert np.all((out.transmittance >= 0) & (out.transmittance <= 1))
        for c in (out.conf_ao, out.conf_vsize):
            assert c.min() >= 0 and c.max() <= 1


def test_wall_depth_exact(cam, wall):
    out = render(wall, Pose.identity(), cam)
    covered = out.valid
    assert covered.all()
    np.testing.assert_allclose(out.depth[covered], 2.0, atol=1e-6)


def test_wall_depth_from_oblique_pose(cam, wall):
    out = render(wall, Pose(yaw(0.3) @ np.eye(3), [0.1, 0.0, 0.0]), cam)
    # Rolling about the optical axis keeps the slab fronto-parallel.
    np.testing.assert_allclose(out.depth[out.valid], 2.0, atol=0.02)


def test_seed_determinism():
    a = make_test_scene(SceneSpec("random-boxes", seed=9))
    b = make_test_scene(SceneSpec("random-boxes", seed=9))
    c = make_test_scene(SceneSpec("random-boxes", seed=10))
    for name in ("centers", "sizes", "alphas", "colors"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.centers.tobytes() != c.centers.tobytes()


def test_zero_extent_rejected():
    with pytest.raises(ValueError):
        make_test_scene(SceneSpec("wall", extent=0.0))


def test_staircase_depth_modes():
    cam = CameraModel(60.0, 60.0, 39.5, 29.5, 80, 60)
    scene = make_test_scene(SceneSpec("staircase", depths=(1.0, 2.0, 4.0), extent=1.6, voxel_size=0.05))
    out = render(scene, Pose.identity(), cam)
    z = out.depth[out.valid]
    hist, edges = np.histogram(z, bins=np.arange(0.0, 5.01, 0.05))
    peaks = [i for i in range(len(hist)) if hist[i] > 0 and hist[i] >= hist[max(i - 1, 0)] and hist[i] >= hist[min(i + 1, len(hist) - 1)]]
    centers = sorted(edges[peaks])
    assert len(centers) == 3
    np.testing.assert_allclose(centers, [1.0, 2.0, 4.0], atol=0.05)


def test_size_accumulator_ordering(cam):
    small = make_test_scene(SceneSpec("wall", voxel_size=0.04))
    large = make_test_scene(SceneSpec("wall", voxel_size=0.08))
    a = render(small, Pose.identity(), cam)
    b = render(large, Pose.identity(), cam)
    assert np.all(b.size_sum > a.size_sum)


def test_invert_size_term():
    cam = CameraModel(40.0, 40.0, 19.5, 14.5, 40, 30)
    scene = make_test_scene(SceneSpec("random-boxes", seed=2, extent=2.0, voxel_size=0.15))
    out = render(scene, Pose.identity(), cam)
    inv = invert_size_confidence(out)
    v = out.valid
    np.testing.assert_allclose(inv[v], (1 - minmax_norm(out.size_sum, v)[v]) * minmax_norm(out.weight_sum, v)[v])
    assert np.all(inv[~v] == 0)


def test_minmax_norm():
    x = np.array([[1.0, 3.0], [2.0, 100.0]])
    valid = np.array([[True, True], [True, False]])
    np.testing.assert_allclose(minmax_norm(x, valid), [[0, 1], [0.5, 0]])
    assert np.all(minmax_norm(np.full((2, 2), 5.0)) == 0)


def test_concurrent_render_is_consistent(cam, wall):
    pose = Pose(np.eye(3), [0.05, 0, 0])
    ref = render(wall, pose, cam)
    with ThreadPoolExecutor(4) as pool:
        outs = list(pool.map(lambda _: render(wall, pose, cam), range(4)))
    for o in outs:
        assert o.color.tobytes() == ref.color.tobytes()


# ---------------------------------------------------------------- flow


def test_flow_identity(cam):
    z = np.full(cam.shape, 2.0)
    np.testing.assert_allclose(flow_from_depth(z, Pose.identity(), cam), 0.0, atol=1e-12)


def test_flow_stereo_shift(cam):
    b, Z = 0.1, 2.0
    z = np.full(cam.shape, Z)
    # Camera moved by b along -x: points shift by +b in the new camera frame.
    f = flow_from_depth(z, Pose(np.eye(3), [b, 0, 0]), cam)
    np.testing.assert_allclose(f[..., 0], cam.fx * b / Z, atol=1e-9)
    np.testing.assert_allclose(f[..., 1], 0.0, atol=1e-9)


def test_flow_forward_motion_radial():
    cam = CameraModel(50.0, 50.0, 20.0, 15.0, 41, 31)
    z = np.full(cam.shape, 3.0)
    f = flow_from_depth(z, Pose(np.eye(3), [0, 0, -0.5]), cam)
    np.testing.assert_allclose(f[15, 20], 0.0, atol=1e-12)
    u, v = cam.pixel_grid()
    r = np.stack([u - cam.cx, v - cam.cy], axis=-1)
    dot = (f * r).sum(-1)
    cross = f[..., 0] * r[..., 1] - f[..., 1] * r[..., 0]
    assert np.all(dot[(u != 20) | (v != 15)] > 0)
    np.testing.assert_allclose(cross, 0.0, atol=1e-9)


def test_flow_sentinels(cam):
    z = np.full(cam.shape, 2.0)
    z[0, 0] = np.nan
    f = flow_from_depth(z, Pose(np.eye(3), [0, 0, -5.0]), cam)
    assert np.all(np.isnan(f[0, 0]))
    assert np.all(np.isnan(f[1, 1]))  # lands behind the second camera


def test_flow_warp_consistency(cam, wall):
    p1 = Pose.identity()
    p2 = Pose(np.eye(3), [0.04, 0.0, 0.0])
    r1, r2 = render(wall, p1, cam), render(wall, p2, cam)
    f = flow_from_depth(r1.depth, relative_pose(p1, p2), cam)
    assert np.allclose(f[..., 1], 0)
    warped, ok = warp_horizontal(r2.color, f[..., 0])
    l1 = np.abs(warped - r1.color)[ok].mean()
    assert l1 < 0.02
