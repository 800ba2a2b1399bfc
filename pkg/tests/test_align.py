import numpy as np
import pytest

from egolabel import (DegenerateConfiguration, InsufficientPoints, RigidTransform,
                      default_pinhole, pnp_estimate, procrustes, project_pinhole)
from egolabel.geometry import axis_angle_to_matrix, matrix_to_axis_angle

from conftest import random_rotation


def euler_rotation_grid(step_deg=5.0):
    """All Rz(a) Ry(b) Rz(c) rotations on a coarse Euler grid, (M, 3, 3)."""
    a = np.deg2rad(np.arange(0.0, 360.0, step_deg))
    b = np.deg2rad(np.arange(0.0, 180.0 + step_deg, step_deg))
    c = np.deg2rad(np.arange(0.0, 360.0, step_deg))

    def rz(t):
        z = np.zeros((t.size, 3, 3))
        z[:, 0, 0] = np.cos(t)
        z[:, 0, 1] = -np.sin(t)
        z[:, 1, 0] = np.sin(t)
        z[:, 1, 1] = np.cos(t)
        z[:, 2, 2] = 1.0
        return z

    def ry(t):
        y = np.zeros((t.size, 3, 3))
        y[:, 0, 0] = np.cos(t)
        y[:, 0, 2] = np.sin(t)
        y[:, 2, 0] = -np.sin(t)
        y[:, 2, 2] = np.cos(t)
        y[:, 1, 1] = 1.0
        return y

    ra, rb, rc = rz(a), ry(b), rz(c)
    ab = np.einsum("aij,bjk->abik", ra, rb).reshape(-1, 3, 3)
    return np.einsum("mij,cjk->mcik", ab, rc).reshape(-1, 3, 3)


def grid_best_residual(source, target, weights, rotations):
    """Brute-force rigid residual: optimal translation per grid rotation.

    For centered clouds, sum w ||t~ - R s~||^2 = const - 2 tr(R^T M) with
    M = sum w t~ s~^T, so only the trace term varies over the grid.
    """
    w = weights
    wsum = w.sum()
    mu_s = (w[:, None] * source).sum(0) / wsum
    mu_t = (w[:, None] * target).sum(0) / wsum
    sc = source - mu_s
    tc = target - mu_t
    const = float((w * (sc * sc).sum(1)).sum() + (w * (tc * tc).sum(1)).sum())
    m = (w[:, None] * tc).T @ sc
    traces = np.einsum("mij,ij->m", rotations, m)
    return const - 2.0 * traces.max()


class TestProcrustes:
    def test_identity_on_equal_clouds(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(0.0, 100.0, (8, 3))
        res = procrustes(pts, pts, with_scale=True)
        assert res.scale == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(res.transform.rotation - np.eye(3)) < 1e-9
        assert np.linalg.norm(res.transform.translation) < 1e-9
        assert res.residual_rms < 1e-9

    def test_exact_recovery(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(0.0, 100.0, (10, 3))
        r = random_rotation(rng)
        t = rng.normal(0.0, 50.0, 3)
        res = procrustes(pts, pts @ r.T + t, with_scale=False)
        assert np.linalg.norm(res.transform.rotation - r) < 1e-9
        assert np.linalg.norm(res.transform.translation - t) < 1e-9
        assert res.residual_rms < 1e-9

    def test_recovery_over_500_seeds(self):
        rng = np.random.default_rng(2)
        for _ in range(500):
            pts = rng.normal(0.0, 100.0, (6, 3))
            r = random_rotation(rng)
            t = rng.normal(0.0, 50.0, 3)
            res = procrustes(pts, pts @ r.T + t, with_scale=False)
            rel = res.transform.rotation @ r.T
            angle = np.arccos(np.clip((np.trace(rel) - 1) / 2, -1, 1))
            assert angle < 1e-8

    def test_scale_recovery(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(0.0, 100.0, (7, 3))
        r = random_rotation(rng)
        res = procrustes(pts, 1.7 * pts @ r.T + 5.0, with_scale=True)
        assert res.scale == pytest.approx(1.7, abs=1e-9)

    def test_rigid_residual_at_least_similarity(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            src = rng.normal(0.0, 100.0, (6, 3))
            tgt = rng.normal(0.0, 100.0, (6, 3))
            rigid = procrustes(src, tgt, with_scale=False).residual_rms
            sim = procrustes(src, tgt, with_scale=True).residual_rms
            assert rigid >= sim - 1e-9

    def test_beats_rotation_grid_oracle(self):
        rotations = euler_rotation_grid(step_deg=15.0)  # coarse grid for speed here
        rng = np.random.default_rng(5)
        src = rng.normal(0.0, 100.0, (5, 3))
        tgt = src @ random_rotation(rng).T + rng.normal(0.0, 5.0, (5, 3))
        w = np.ones(5)
        res = procrustes(src, tgt, weights=w, with_scale=False)
        closed_ss = res.residual_rms ** 2 * w.sum()
        assert closed_ss < grid_best_residual(src, tgt, w, rotations)

    def test_weights_exclude_outliers(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(0.0, 100.0, (8, 3))
        r = random_rotation(rng)
        tgt = pts @ r.T
        tgt[0] += 1e5  # wild outlier, weighted out
        w = np.ones(8)
        w[0] = 0.0
        res = procrustes(pts, tgt, weights=w, with_scale=False)
        assert np.linalg.norm(res.transform.rotation - r) < 1e-9

    def test_equivariance_under_common_rotation(self):
        rng = np.random.default_rng(7)
        src = rng.normal(0.0, 100.0, (6, 3))
        tgt = rng.normal(0.0, 100.0, (6, 3))
        q = random_rotation(rng)
        base = procrustes(src, tgt, with_scale=False).transform.rotation
        conj = procrustes(src @ q.T, tgt @ q.T, with_scale=False).transform.rotation
        assert np.linalg.norm(conj - q @ base @ q.T) < 1e-9

    def test_reflection_rejected(self):
        rng = np.random.default_rng(8)
        src = rng.normal(0.0, 100.0, (10, 3))
        tgt = src.copy()
        tgt[:, 0] *= -1.0  # mirrored cloud
        res = procrustes(src, tgt, with_scale=False)
        assert np.linalg.det(res.transform.rotation) > 0

    def test_insufficient_points(self):
        pts = np.random.default_rng(9).normal(0.0, 100.0, (5, 3))
        with pytest.raises(InsufficientPoints):
            procrustes(pts[:2], pts[:2])
        w = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
        with pytest.raises(InsufficientPoints):
            procrustes(pts, pts, weights=w)

    def test_collinear_degenerate(self):
        line = np.outer(np.arange(5.0), [1.0, 2.0, 0.5])
        with pytest.raises(DegenerateConfiguration):
            procrustes(line, line)


def noncoplanar_points(rng, n=15):
    pts = rng.normal(0.0, 400.0, (n, 3))
    pts[:, 2] += 100.0
    return pts


class TestPnP:
    def make_problem(self, rng, n=15):
        model = default_pinhole()
        pose = RigidTransform(random_rotation(rng), rng.normal(0.0, 200.0, 3) + [0, 0, 3000.0])
        pts = noncoplanar_points(rng, n)
        pix = np.stack([project_pinhole(model, pose, p) for p in pts])
        return model, pose, pts, pix

    def test_exact_recovery(self):
        rng = np.random.default_rng(10)
        model, pose, pts, pix = self.make_problem(rng)
        est = pnp_estimate(pts, pix, model)
        rel = est.rotation @ pose.rotation.T
        angle = np.arccos(np.clip((np.trace(rel) - 1) / 2, -1, 1))
        assert angle < 1e-3
        assert np.linalg.norm(est.translation - pose.translation) < 1e-3 * np.linalg.norm(pose.translation)

    def test_identity_pose(self):
        rng = np.random.default_rng(11)
        model = default_pinhole()
        pts = noncoplanar_points(rng)
        pts[:, 2] += 2500.0  # in front of the camera at identity
        pix = np.stack([project_pinhole(model, RigidTransform.identity(), p) for p in pts])
        est = pnp_estimate(pts, pix, model)
        angle = np.arccos(np.clip((np.trace(est.rotation) - 1) / 2, -1, 1))
        assert angle < 1e-3
        assert np.linalg.norm(est.translation) < 3.0  # mm, vs ~3 m point depth

    def test_noisy_pixels_reasonable(self):
        rng = np.random.default_rng(12)
        model, pose, pts, pix = self.make_problem(rng)
        noisy = pix + rng.normal(0.0, 1.0, pix.shape)
        est, report = pnp_estimate(pts, noisy, model, return_report=True)
        assert report.rms_refined <= 2.0
        assert report.rms_refined <= report.rms_dlt + 1e-12

    def test_refinement_never_worse_than_dlt(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            model, pose, pts, pix = self.make_problem(rng)
            noisy = pix + rng.normal(0.0, 2.0, pix.shape)
            _, report = pnp_estimate(pts, noisy, model, return_report=True)
            assert report.rms_refined <= report.rms_dlt + 1e-12

    def test_weights_drop_bad_correspondences(self):
        rng = np.random.default_rng(14)
        model, pose, pts, pix = self.make_problem(rng)
        pix_bad = pix.copy()
        pix_bad[0] += 500.0
        w = np.ones(len(pts))
        w[0] = 0.0
        est = pnp_estimate(pts, pix_bad, model, weights=w)
        rel = est.rotation @ pose.rotation.T
        angle = np.arccos(np.clip((np.trace(rel) - 1) / 2, -1, 1))
        assert angle < 1e-3

    def test_coplanar_raises(self):
        rng = np.random.default_rng(15)
        model = default_pinhole()
        pts = rng.normal(0.0, 300.0, (15, 3))
        pts[:, 2] = 2000.0  # all in one plane
        pix = np.stack([project_pinhole(model, RigidTransform.identity(), p) for p in pts])
        with pytest.raises(DegenerateConfiguration):
            pnp_estimate(pts, pix, model)

    def test_too_few_points(self):
        rng = np.random.default_rng(16)
        model, pose, pts, pix = self.make_problem(rng)
        with pytest.raises(InsufficientPoints):
            pnp_estimate(pts[:5], pix[:5], model)
