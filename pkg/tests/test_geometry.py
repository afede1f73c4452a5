import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from core.errors import BehindCamera, InvalidCamera, NonPositiveDepth
from core.geometry import Camera, Intrinsics, Pose, back_project, camera_distance, project


def _random_camera(rng, width=64, height=48):
    intrinsics = Intrinsics(rng.uniform(40, 90), rng.uniform(40, 90), rng.uniform(20, 44), rng.uniform(14, 34),
                            width, height)
    rotation = Rotation.from_rotvec(rng.normal(scale=0.3, size=3)).as_matrix()
    return Camera(intrinsics, Pose.from_center(rotation, rng.normal(scale=0.5, size=3)))


class TestIntrinsics:
    def test_rejects_non_positive_focal(self):
        with pytest.raises(InvalidCamera):
            Intrinsics(0.0, 10.0, 5.0, 5.0, 10, 10)

    def test_rejects_principal_point_outside_image(self):
        with pytest.raises(InvalidCamera):
            Intrinsics(10.0, 10.0, 10.0, 5.0, 10, 10)

    def test_scaled_uses_ceil_division(self):
        K = Intrinsics(100.0, 100.0, 80.0, 60.0, 161, 120).scaled(8)
        assert (K.width, K.height) == (21, 15)
        assert (K.fx, K.fy, K.cx, K.cy) == (12.5, 12.5, 10.0, 7.5)

    def test_scale_one_is_identity(self):
        K = Intrinsics(100.0, 100.0, 80.0, 60.0, 160, 120)
        assert K.scaled(1) is K


class TestPose:
    def test_rejects_non_orthonormal_rotation(self):
        with pytest.raises(InvalidCamera):
            Pose(np.diag([1.0, 1.0, 2.0]), np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(InvalidCamera):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_center_round_trip(self):
        rotation = Rotation.from_euler("xyz", [0.1, -0.2, 0.3]).as_matrix()
        pose = Pose.from_center(rotation, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(pose.center, [1.0, 2.0, 3.0], atol=1e-12)

    def test_look_at_down_the_z_axis_is_identity(self):
        pose = Pose.look_at([0.0, 0.0, 0.0], [0.0, 0.0, 5.0])
        np.testing.assert_allclose(pose.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(pose.optical_axis, [0.0, 0.0, 1.0])

    def test_look_at_points_at_target(self):
        pose = Pose.look_at([1.0, -0.5, 0.0], [0.0, 0.0, 4.0])
        target_cam = pose.transform(np.array([[0.0, 0.0, 4.0]]))[0]
        np.testing.assert_allclose(target_cam[:2], 0.0, atol=1e-12)
        assert target_cam[2] > 0

    def test_relative_to_same_pose_is_exact_identity(self):
        pose = Pose.from_center(Rotation.from_rotvec([0.3, 0.1, -0.2]).as_matrix(), [0.2, 0.1, 0.7])
        R, t = pose.relative_to(Pose(pose.rotation.copy(), pose.translation.copy()))
        assert np.array_equal(R, np.eye(3))
        assert np.array_equal(t, np.zeros(3))

    def test_compose_with_inverse_is_identity(self):
        pose = Pose.from_center(Rotation.from_rotvec([0.3, 0.1, -0.2]).as_matrix(), [0.2, 0.1, 0.7])
        both = pose.compose(pose.inverse())
        np.testing.assert_allclose(both.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(both.translation, 0.0, atol=1e-12)


class TestProjection:
    def test_on_axis_point_hits_principal_point(self, make_camera):
        camera = make_camera(width=64, height=48, f=50.0, cx=32.0, cy=24.0)
        hit = project(camera, [0.0, 0.0, 3.0])
        assert (hit.u, hit.v, hit.depth, hit.in_bounds) == (32.0, 24.0, 3.0, True)

    def test_point_behind_camera_raises(self, make_camera):
        with pytest.raises(BehindCamera):
            project(make_camera(), [0.0, 0.0, -1.0])

    def test_point_at_camera_plane_raises(self, make_camera):
        with pytest.raises(BehindCamera):
            project(make_camera(), [1.0, 0.0, 0.0])

    def test_out_of_bounds_is_reported(self, make_camera):
        hit = project(make_camera(width=32, height=24, f=30.0), [10.0, 0.0, 1.0])
        assert not hit.in_bounds

    def test_back_project_rejects_non_positive_depth(self, make_camera):
        with pytest.raises(NonPositiveDepth):
            back_project(make_camera(), (3.0, 4.0), 0.0)

    def test_round_trip_on_random_cameras(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            camera = _random_camera(rng)
            pixel = (rng.uniform(0, 64), rng.uniform(0, 48))
            depth = rng.uniform(0.5, 20.0)
            hit = project(camera, back_project(camera, pixel, depth))
            assert abs(hit.u - pixel[0]) < 1e-9
            assert abs(hit.v - pixel[1]) < 1e-9
            assert abs(hit.depth - depth) < 1e-9 * depth

    def test_vectorized_projection_matches_scalar(self):
        rng = np.random.default_rng(1)
        camera = _random_camera(rng)
        points = camera.back_project_pixels(rng.uniform(0, 64, 20), rng.uniform(0, 48, 20), rng.uniform(1, 5, 20))
        u, v, z = camera.project_points(points)
        for k, point in enumerate(points):
            hit = project(camera, point)
            assert abs(hit.u - u[k]) < 1e-12 and abs(hit.v - v[k]) < 1e-12 and abs(hit.depth - z[k]) < 1e-12

    def test_camera_distance(self, make_camera):
        a = make_camera(center=(0.0, 0.0, 0.0))
        b = make_camera(center=(3.0, 4.0, 0.0))
        assert camera_distance(a, b) == 5.0
