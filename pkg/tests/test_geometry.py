import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egolabel import (BehindCamera, FisheyeModel, OutsideFieldOfView, PinholeModel,
                      RigidTransform, compose, default_fisheye, default_pinhole,
                      invert, load_calibration, project_fisheye, project_pinhole,
                      save_calibration, unproject_fisheye)
from egolabel.geometry import (axis_angle_jacobian, axis_angle_to_matrix,
                               matrix_to_axis_angle, orthonormalize,
                               project_fisheye_batch)

from conftest import random_rotation


def random_transform(rng):
    return RigidTransform(random_rotation(rng), rng.normal(0.0, 500.0, 3))


class TestRigidTransform:
    def test_compose_identity(self):
        rng = np.random.default_rng(1)
        t = random_transform(rng)
        out = compose(RigidTransform.identity(), t)
        np.testing.assert_allclose(out.rotation, t.rotation)
        np.testing.assert_allclose(out.translation, t.translation)

    def test_compose_inverse_is_identity(self):
        rng = np.random.default_rng(2)
        t = random_transform(rng)
        out = compose(t, invert(t))
        assert np.linalg.norm(out.rotation - np.eye(3)) < 1e-9
        assert np.linalg.norm(out.translation) < 1e-9

    def test_compose_matches_homogeneous_matmul_oracle(self):
        # oracle: dense 4x4 homogeneous matrix product
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = random_transform(rng), random_transform(rng)
            expected = a.matrix() @ b.matrix()
            got = compose(a, b).matrix()
            np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_compose_applies_b_then_a(self):
        rng = np.random.default_rng(4)
        a, b = random_transform(rng), random_transform(rng)
        p = rng.normal(0.0, 100.0, 3)
        np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)),
                                   atol=1e-9)

    def test_compose_associative(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            a, b, c = (random_transform(rng) for _ in range(3))
            left = compose(compose(a, b), c)
            right = compose(a, compose(b, c))
            assert np.linalg.norm(left.matrix() - right.matrix()) < 1e-9

    def test_orthonormal_flag(self):
        rng = np.random.default_rng(6)
        t = random_transform(rng)
        assert t.is_orthonormal()
        bad = RigidTransform(t.rotation * 1.001, t.translation)
        assert not bad.is_orthonormal()

    def test_orthonormalize_recovers_rotation(self):
        rng = np.random.default_rng(7)
        r = random_rotation(rng)
        noisy = r + rng.normal(0.0, 1e-3, (3, 3))
        fixed = orthonormalize(noisy)
        assert np.linalg.norm(fixed.T @ fixed - np.eye(3)) < 1e-12
        assert np.linalg.det(fixed) > 0


class TestAxisAngle:
    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-50.0, 50.0), min_size=3, max_size=3))
    def test_always_orthonormal(self, omega):
        r = axis_angle_to_matrix(np.array(omega))
        assert np.linalg.norm(r.T @ r - np.eye(3)) < 1e-12
        assert abs(np.linalg.det(r) - 1.0) < 1e-12

    def test_round_trip_over_angle_range(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            axis = rng.normal(0.0, 1.0, 3)
            axis /= np.linalg.norm(axis)
            angle = rng.uniform(1e-6, np.pi - 1e-6)
            omega = axis * angle
            back = matrix_to_axis_angle(axis_angle_to_matrix(omega))
            assert np.linalg.norm(back - omega) < 1e-7

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            omega = rng.normal(0.0, 1.0, 3)
            jac = axis_angle_jacobian(omega)
            h = 1e-6
            for k in range(3):
                e = np.zeros(3)
                e[k] = h
                fd = (axis_angle_to_matrix(omega + e) - axis_angle_to_matrix(omega - e)) / (2 * h)
                assert np.abs(jac[k] - fd).max() < 1e-6


class TestPinhole:
    def test_optical_axis(self):
        model = PinholeModel(fx=500, fy=500, cx=320, cy=240)
        pix = project_pinhole(model, RigidTransform.identity(), [0.0, 0.0, 1000.0])
        np.testing.assert_allclose(pix, [320.0, 240.0])

    def test_known_offset(self):
        model = PinholeModel(fx=500, fy=500, cx=320, cy=240)
        pix = project_pinhole(model, RigidTransform.identity(), [100.0, 0.0, 2000.0])
        np.testing.assert_allclose(pix, [345.0, 240.0])

    def test_matches_homogeneous_oracle(self):
        # oracle: x = K [R|t] [p; 1], pixel = x[:2] / x[2]
        rng = np.random.default_rng(10)
        model = default_pinhole()
        for _ in range(50):
            cam = random_transform(rng)
            p = rng.normal(0.0, 400.0, 3)
            q = cam.apply(p)
            if q[2] <= 1.0:
                continue
            proj_mat = model.matrix() @ np.hstack([cam.rotation, cam.translation[:, None]])
            x = proj_mat @ np.append(p, 1.0)
            expected = x[:2] / x[2]
            got = project_pinhole(model, cam, p)
            assert np.linalg.norm(got - expected) < 1e-9

    def test_homogeneous_scaling_invariance(self):
        model = default_pinhole()
        rng = np.random.default_rng(11)
        cam = RigidTransform.identity()
        for _ in range(30):
            p = rng.normal(0.0, 300.0, 3)
            p[2] = abs(p[2]) + 100.0
            lam = rng.uniform(0.1, 10.0)
            a = project_pinhole(model, cam, p)
            b = project_pinhole(model, cam, lam * p)
            assert np.linalg.norm(a - b) < 1e-9

    def test_behind_camera_raises(self):
        model = default_pinhole()
        with pytest.raises(BehindCamera):
            project_pinhole(model, RigidTransform.identity(), [0.0, 0.0, -10.0])


def in_fov_points(model, rng, n):
    """Points spread over the field of view, away from the boundary."""
    theta_max = np.arctan2(model.image_radius, model.radial(model.image_radius))
    theta = rng.uniform(0.0, 0.98 * theta_max, n)
    phi = rng.uniform(0.0, 2 * np.pi, n)
    d = rng.uniform(300.0, 3000.0, n)
    return np.stack([np.sin(theta) * np.cos(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(theta)], axis=-1) * d[:, None]


class TestFisheye:
    def test_optical_axis_maps_to_center(self):
        model = default_fisheye()
        pix = project_fisheye(model, [0.0, 0.0, 700.0])
        np.testing.assert_allclose(pix, model.center, atol=1e-9)

    def test_center_unprojects_along_axis(self):
        model = default_fisheye()
        p = unproject_fisheye(model, model.center, 500.0)
        sign = np.sign(model.poly[0])
        np.testing.assert_allclose(p, [0.0, 0.0, sign * 500.0], atol=1e-9)

    def test_unproject_norm_is_distance(self):
        model = default_fisheye()
        rng = np.random.default_rng(12)
        for _ in range(100):
            ang = rng.uniform(0.0, 2 * np.pi)
            rad = rng.uniform(0.0, model.image_radius * 0.99)
            pix = model.center + rad * np.array([np.cos(ang), np.sin(ang)])
            d = rng.uniform(10.0, 5000.0)
            p = unproject_fisheye(model, pix, d)
            assert abs(np.linalg.norm(p) - d) < 1e-9 * d

    def test_project_unproject_round_trip(self):
        model = default_fisheye()
        rng = np.random.default_rng(13)
        pts = in_fov_points(model, rng, 1000)
        for p in pts:
            pix = project_fisheye(model, p)
            back = unproject_fisheye(model, pix, float(np.linalg.norm(p)))
            assert np.linalg.norm(back - p) < 1e-6 * np.linalg.norm(p)

    def test_unproject_project_round_trip_on_pixel_grid(self):
        model = default_fisheye()
        rng = np.random.default_rng(14)
        for _ in range(300):
            ang = rng.uniform(0.0, 2 * np.pi)
            rad = rng.uniform(1.0, model.image_radius * 0.98)
            pix = model.center + rad * np.array([np.cos(ang), np.sin(ang)])
            p = unproject_fisheye(model, pix, 1000.0)
            back = project_fisheye(model, p)
            assert np.linalg.norm(back - pix) < 1e-6

    def test_projected_ray_parallel_to_point(self):
        model = default_fisheye()
        rng = np.random.default_rng(15)
        for p in in_fov_points(model, rng, 100):
            pix = project_fisheye(model, p)
            ray = unproject_fisheye(model, pix, 1.0)
            cosang = ray @ p / (np.linalg.norm(ray) * np.linalg.norm(p))
            assert np.arccos(np.clip(cosang, -1, 1)) < 1e-6

    def test_fov_boundary_hits_image_radius(self):
        # oracle: dense scan of the field angle over the radius range
        model = default_fisheye()
        rho = np.linspace(0.0, model.image_radius, 200001)
        theta = np.arctan2(rho, model.radial(rho))
        boundary_angle = theta[-1]
        assert np.all(np.diff(theta) > 0)  # monotone over the scanned range
        p = 800.0 * np.array([np.sin(boundary_angle), 0.0, np.cos(boundary_angle)])
        pix = project_fisheye(model, p)
        assert abs(np.linalg.norm(pix - model.center) - model.image_radius) < 0.5

    def test_outside_fov_raises(self):
        model = default_fisheye()
        with pytest.raises(OutsideFieldOfView):
            project_fisheye(model, [0.0, 0.0, -800.0])  # straight behind
        with pytest.raises(OutsideFieldOfView):
            unproject_fisheye(model, model.center + [model.image_radius + 5.0, 0.0], 100.0)

    def test_origin_point_rejected(self):
        with pytest.raises(ValueError):
            project_fisheye(default_fisheye(), [0.0, 0.0, 1e-9])

    def test_batch_gradient_matches_finite_differences(self):
        from egolabel.geometry import project_fisheye_batch_grad
        model = default_fisheye()
        rng = np.random.default_rng(16)
        pts = in_fov_points(model, rng, 40)
        _, valid, jac = project_fisheye_batch_grad(model, pts)
        assert valid.all()
        h = 1e-3
        for n in range(pts.shape[0]):
            for k in range(3):
                dp = np.zeros(3)
                dp[k] = h
                hi, _ = project_fisheye_batch(model, (pts[n] + dp)[None])
                lo, _ = project_fisheye_batch(model, (pts[n] - dp)[None])
                fd = (hi[0] - lo[0]) / (2 * h)
                assert np.abs(jac[n, :, k] - fd).max() < 1e-4


class TestCalibrationIO:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "calib.json"
        save_calibration(path, default_pinhole(), default_fisheye())
        pin, fish = load_calibration(path)
        assert pin == default_pinhole()
        np.testing.assert_allclose(fish.poly, default_fisheye().poly)
        np.testing.assert_allclose(fish.center, default_fisheye().center)
        assert fish.image_radius == default_fisheye().image_radius

    def test_affine_stretch_round_trip(self):
        base = default_fisheye()
        model = FisheyeModel(poly=base.poly, center=base.center,
                             affine=np.array([[1.02, 0.01], [-0.005, 1.0]]),
                             image_radius=base.image_radius)
        p = np.array([250.0, -130.0, 800.0])
        pix = project_fisheye(model, p)
        back = unproject_fisheye(model, pix, float(np.linalg.norm(p)))
        assert np.linalg.norm(back - p) < 1e-6 * np.linalg.norm(p)
