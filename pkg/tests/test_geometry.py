import numpy as np
import pytest

from sparsesplat.errors import ValidationError
from sparsesplat.features import FeatureMap
from sparsesplat.geometry import (Intrinsics, Pose, depth_planes, look_at,
                                  plane_sweep_warp, project, unproject)

from conftest import make_camera


class TestDepthPlanes:
    def test_uniform_spacing(self):
        assert np.allclose(depth_planes(1, 100, 4).values, [1, 34, 67, 100])
        assert np.allclose(depth_planes(2, 10, 5).values, [2, 4, 6, 8, 10])

    def test_endpoints_only(self):
        assert np.allclose(depth_planes(1, 100, 2).values, [1, 100])

    def test_strictly_increasing_and_endpoint_exact(self):
        for near, far, n in [(1, 100, 32), (0.5, 8, 7), (3, 3.5, 2)]:
            planes = depth_planes(near, far, n)
            assert planes.values[0] == near and planes.values[-1] == far
            assert np.all(np.diff(planes.values) > 0)

    def test_inverse_mode(self):
        planes = depth_planes(1, 100, 5, inverse=True)
        assert planes.values[0] == 1 and planes.values[-1] == 100
        assert np.allclose(1.0 / planes.values, np.linspace(1.0, 0.01, 5))

    @pytest.mark.parametrize("args", [(0, 100, 4), (5, 5, 4), (10, 5, 4), (1, 100, 1)])
    def test_invalid_range(self, args):
        with pytest.raises(ValidationError):
            depth_planes(*args)


class TestUnproject:
    def test_principal_ray(self):
        cam = make_camera(32, 32)
        k = cam.intrinsics
        point = unproject((k.cx, k.cy), 5.0, k, Pose.identity())
        assert np.allclose(point, [0, 0, 5])

    def test_unit_tangent_ray(self):
        k = Intrinsics(fx=100, fy=100, cx=0, cy=0, width=200, height=200)
        point = unproject((100, 0), 2.0, k, Pose.identity())
        assert np.allclose(point, [2, 0, 2])

    def test_translated_pose(self):
        # Hand-applied inverse transform: X_cam = X_world + t with t = (0,0,-5),
        # so the camera point (0, 0, 5) lives at world (0, 0, 10).
        cam = make_camera(32, 32)
        pose = Pose(np.eye(3), [0.0, 0.0, -5.0])
        point = unproject((cam.intrinsics.cx, cam.intrinsics.cy), 5.0,
                          cam.intrinsics, pose)
        assert np.allclose(point, [0, 0, 10])

    def test_nonpositive_depth_rejected(self):
        cam = make_camera()
        with pytest.raises(ValidationError):
            unproject((1.0, 1.0), 0.0, cam.intrinsics, Pose.identity())

    def test_project_unproject_roundtrip(self, rng):
        k = Intrinsics(fx=80, fy=64, cx=15.2, cy=16.1, width=32, height=32)
        pose = look_at([1.0, -0.5, -2.0], [0.0, 0.0, 1.0])
        for _ in range(50):
            pixel = rng.uniform(0, 31, 2)
            depth = rng.uniform(0.5, 10)
            world = unproject(pixel, depth, k, pose)
            back, z = project(world, k, pose)
            assert np.allclose(back, pixel, atol=1e-6)
            assert abs(z - depth) < 1e-9


class TestPose:
    def test_rejects_scaled_rotation(self):
        with pytest.raises(ValidationError):
            Pose(2.0 * np.eye(3), np.zeros(3))

    def test_rejects_reflection(self):
        ref = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValidationError):
            Pose(ref, np.zeros(3))

    def test_camera_center(self):
        pose = look_at([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
        assert np.allclose(pose.camera_center, [1, 2, 3], atol=1e-12)


def _plane_texture(x, y):
    # Smooth enough that bilinear resampling error stays well under 1e-3.
    return (0.5 + 0.2 * np.sin(2 * np.pi * x / 2.5)
            + 0.2 * np.cos(2 * np.pi * y / 3.1))


def _render_plane(camera, plane_z, channels=2):
    """Brute-force projector: intersect each pixel ray with the plane z = plane_z."""
    k = camera.intrinsics
    ys, xs = np.meshgrid(np.arange(k.height, dtype=float),
                         np.arange(k.width, dtype=float), indexing="ij")
    origin = camera.pose.camera_center
    dirs = np.stack([(xs - k.cx) / k.fx, (ys - k.cy) / k.fy, np.ones_like(xs)], axis=-1)
    dirs_world = dirs @ camera.pose.rotation
    t = (plane_z - origin[2]) / dirs_world[..., 2]
    pts = origin + t[..., None] * dirs_world
    tex = _plane_texture(pts[..., 0], pts[..., 1])
    data = np.stack([tex ** (i + 1) for i in range(channels)])
    return FeatureMap(data=data, view_index=camera.index)


class TestPlaneSweepWarp:
    def test_identity_warp(self, rng):
        cam = make_camera(24, 24)
        feat = FeatureMap(data=rng.standard_normal((3, 24, 24)))
        for depth in (1.0, 5.0, 50.0):
            warped, valid = plane_sweep_warp(feat, cam, cam, depth)
            assert valid.all()
            assert np.max(np.abs(warped.data - feat.data)) < 1e-6

    def test_constant_preserved(self):
        cam_i = make_camera(24, 24)
        cam_j = make_camera(24, 24, pose=look_at([0.2, 0.1, -0.2], [0.0, 0.0, 4.0]))
        feat = FeatureMap(data=np.full((2, 24, 24), 0.7))
        warped, valid = plane_sweep_warp(feat, cam_i, cam_j, 4.0)
        assert np.allclose(warped.data[:, valid], 0.7)

    def test_textured_plane_matches_at_plane_depth(self):
        # Two converging cameras observing a plane exactly at the sweep depth:
        # warped view-j features must reproduce view-i features.
        plane_z = 4.0
        cam_i = make_camera(64, 64, focal=120, index=0)
        cam_j = make_camera(64, 64, focal=120, index=1,
                            pose=look_at([0.5, 0.3, 0.0], [0.0, 0.0, plane_z]))
        f_i = _render_plane(cam_i, plane_z)
        f_j = _render_plane(cam_j, plane_z)
        warped, valid = plane_sweep_warp(f_j, cam_i, cam_j, plane_z)
        interior = valid.copy()
        interior[:2], interior[-2:], interior[:, :2], interior[:, -2:] = 0, 0, 0, 0
        err = np.abs(warped.data - f_i.data)[:, interior]
        assert interior.sum() > 1000
        assert err.max() < 1e-3

    def test_round_trip(self):
        # Warping j -> i then i -> j at the same plane depth reproduces the
        # interior. A translated (non-rotated) pair shares the sweep plane in
        # both frames, so the composition is the identity up to double
        # bilinear resampling; the crop stays clear of border contamination.
        plane_z = 4.0
        cam_i = make_camera(64, 64, focal=120, index=0)
        cam_j = make_camera(64, 64, focal=120, index=1,
                            pose=Pose(np.eye(3), [-0.4, -0.2, 0.0]))
        f_j = _render_plane(cam_j, plane_z)
        to_i, _ = plane_sweep_warp(f_j, cam_i, cam_j, plane_z)
        back, valid_b = plane_sweep_warp(to_i, cam_j, cam_i, plane_z)
        crop = np.s_[18:46, 18:46]
        assert valid_b[crop].all()
        err = np.abs(back.data - f_j.data)[(np.s_[:],) + crop]
        assert err.max() < 1e-3

    def test_out_of_frustum_is_masked_not_error(self):
        cam_i = make_camera(16, 16)
        cam_j = make_camera(16, 16, pose=look_at([5.0, 0.0, 0.0], [5.0, 0.0, 4.0]))
        feat = FeatureMap(data=np.ones((1, 16, 16)))
        warped, valid = plane_sweep_warp(feat, cam_i, cam_j, 2.0)
        assert not valid.all()
        assert np.all(warped.data[:, ~valid] == 0)

    def test_nonpositive_depth_rejected(self):
        cam = make_camera()
        feat = FeatureMap(data=np.ones((1, 16, 16)))
        with pytest.raises(ValidationError):
            plane_sweep_warp(feat, cam, cam, 0.0)
