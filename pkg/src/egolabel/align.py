"""Closed-form Procrustes alignment and Perspective-n-Point initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfiguration, InsufficientPoints
from .geometry import (PinholeModel, RigidTransform, axis_angle_jacobian,
                       axis_angle_to_matrix, matrix_to_axis_angle, orthonormalize)

_COLLINEAR_REL_TOL = 1e-9
_COPLANAR_REL_TOL = 1e-8


@dataclass(frozen=True)
class AlignmentResult:
    """Similarity (or rigid) alignment target ~ scale * R @ source + t."""

    scale: float
    transform: RigidTransform
    residual_rms: float


def _prepare_weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"weights must have shape ({n},)")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    return w


def procrustes(source: np.ndarray, target: np.ndarray, weights=None,
               with_scale: bool = False) -> AlignmentResult:
    """Weighted least-squares alignment of source onto target.

    Minimizes sum_i w_i ||target_i - (s R source_i + t)||^2 over rotation R
    (det +1, reflections rejected), translation t, and optionally scale s.
    SVD solution with the determinant sign fix.

    Raises InsufficientPoints (fewer than 3 usable points) and
    DegenerateConfiguration (collinear or coincident source points).
    """
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    if src.ndim != 2 or src.shape[1] != 3 or src.shape != tgt.shape:
        raise ValueError("source and target must both be (N, 3)")
    w = _prepare_weights(src.shape[0], weights)
    if np.count_nonzero(w > 0) < 3:
        raise InsufficientPoints("at least 3 points with positive weight required")

    wsum = w.sum()
    mu_s = (w[:, None] * src).sum(axis=0) / wsum
    mu_t = (w[:, None] * tgt).sum(axis=0) / wsum
    sc = src - mu_s
    tc = tgt - mu_t

    # degeneracy: source variance must span at least a plane's worth of rank 2
    cov_s = (w[:, None] * sc).T @ sc / wsum
    sing = np.linalg.svd(cov_s, compute_uv=False)
    if sing[0] <= 0 or sing[1] < _COLLINEAR_REL_TOL * sing[0]:
        raise DegenerateConfiguration("source points are collinear or coincident")

    h = (w[:, None] * tc).T @ sc  # cross-covariance, target x source
    u, s, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(u @ vt))
    dfix = np.array([1.0, 1.0, d])
    rot = u @ np.diag(dfix) @ vt

    if with_scale:
        denom = float((w * (sc * sc).sum(axis=1)).sum())
        scale = float((s * dfix).sum() / denom)
    else:
        scale = 1.0

    t = mu_t - scale * rot @ mu_s
    res = tgt - (scale * src @ rot.T + t)
    rms = float(np.sqrt((w * (res * res).sum(axis=1)).sum() / wsum))
    return AlignmentResult(scale=scale, transform=RigidTransform(rot, t), residual_rms=rms)


# ---------------------------------------------------------------------------
# Perspective-n-Point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PnPReport:
    rms_dlt: float
    rms_refined: float
    iterations: int
    converged: bool


def _reprojection_rms(model: PinholeModel, rot, trans, pts, pix, w) -> float:
    q = pts @ rot.T + trans
    z = np.maximum(q[:, 2], 1e-9)
    proj = np.stack([model.fx * q[:, 0] / z + model.cx,
                     model.fy * q[:, 1] / z + model.cy], axis=-1)
    err2 = ((proj - pix) ** 2).sum(axis=1)
    return float(np.sqrt((w * err2).sum() / w.sum()))


def pnp_estimate(points3d: np.ndarray, pixels: np.ndarray, model: PinholeModel,
                 weights=None, max_refine_iters: int = 50,
                 return_report: bool = False):
    """Camera pose from 3D-2D correspondences: DLT + SO(3) projection + refinement.

    points3d (N, 3) in the world/body frame (mm), pixels (N, 2). Solves the
    overdetermined linear system, projects the rotation block onto SO(3),
    then runs Gauss-Newton on (axis-angle, t) with step halving so the
    returned pose never reprojects worse than the DLT solution.

    Raises InsufficientPoints (N < 6 usable) and DegenerateConfiguration
    (coplanar or collinear 3D points).
    """
    pts = np.asarray(points3d, dtype=float)
    pix = np.asarray(pixels, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or pix.shape != (pts.shape[0], 2):
        raise ValueError("points3d must be (N, 3) and pixels (N, 2)")
    w = _prepare_weights(pts.shape[0], weights)
    use = w > 0
    if np.count_nonzero(use) < 6:
        raise InsufficientPoints("PnP requires at least 6 weighted correspondences")
    pts = pts[use]
    pix = pix[use]
    w = w[use]
    n = pts.shape[0]

    centered = pts - pts.mean(axis=0)
    sing = np.linalg.svd(centered, compute_uv=False)
    if sing[0] <= 0 or sing[2] < _COPLANAR_REL_TOL * sing[0]:
        raise DegenerateConfiguration("3D points are coplanar or collinear")

    # normalized image coordinates
    xn = (pix[:, 0] - model.cx) / model.fx
    yn = (pix[:, 1] - model.cy) / model.fy

    # condition the 3D points: X' = (X - mu) / s
    mu = pts.mean(axis=0)
    s3 = float(np.sqrt((centered ** 2).sum(axis=1).mean() / 3.0))
    xp = centered / s3

    a = np.zeros((2 * n, 12))
    xh = np.hstack([xp, np.ones((n, 1))])
    sw = np.sqrt(w)[:, None]
    a[0::2, 0:4] = xh * sw
    a[0::2, 8:12] = -xn[:, None] * xh * sw
    a[1::2, 4:8] = xh * sw
    a[1::2, 8:12] = -yn[:, None] * xh * sw
    _, _, vt = np.linalg.svd(a)
    p = vt[-1].reshape(3, 4)

    # undo the 3D conditioning: x ~ P' (X - mu)/s
    m = p[:, :3] / s3
    b = p[:, 3] - p[:, :3] @ mu / s3
    # fix the overall sign so depths are positive
    depths = pts @ m[2] + b[2]
    if np.median(depths) < 0:
        m, b = -m, -b
    u, sv, vtm = np.linalg.svd(m)
    scale = sv.mean()
    rot = u @ np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vtm))]) @ vtm
    trans = b / scale

    rms_dlt = _reprojection_rms(model, rot, trans, pts, pix, w)

    # Gauss-Newton refinement on (axis-angle, translation)
    omega = matrix_to_axis_angle(orthonormalize(rot))
    best_rms = rms_dlt
    best = (omega.copy(), trans.copy())
    iters = 0
    converged = False
    for iters in range(1, max_refine_iters + 1):
        r = axis_angle_to_matrix(omega)
        q = pts @ r.T + trans
        z = np.maximum(q[:, 2], 1e-9)
        proj = np.stack([model.fx * q[:, 0] / z + model.cx,
                         model.fy * q[:, 1] / z + model.cy], axis=-1)
        res = (proj - pix).reshape(-1)

        # d proj / d q, (n, 2, 3)
        dpq = np.zeros((n, 2, 3))
        dpq[:, 0, 0] = model.fx / z
        dpq[:, 0, 2] = -model.fx * q[:, 0] / z ** 2
        dpq[:, 1, 1] = model.fy / z
        dpq[:, 1, 2] = -model.fy * q[:, 1] / z ** 2
        drot = axis_angle_jacobian(omega)  # (3, 3, 3)
        dq_dom = np.einsum("kab,nb->nak", drot, pts)  # (n, 3, 3)
        jac = np.zeros((2 * n, 6))
        jac[:, 0:3] = np.einsum("nij,njk->nik", dpq, dq_dom).reshape(2 * n, 3)
        jac[:, 3:6] = dpq.reshape(2 * n, 3)

        sw2 = np.repeat(np.sqrt(w), 2)
        jw = jac * sw2[:, None]
        rw = res * sw2
        try:
            delta = np.linalg.lstsq(jw, -rw, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        step = 1.0
        improved = False
        for _ in range(20):
            om_try = omega + step * delta[0:3]
            t_try = trans + step * delta[3:6]
            rms_try = _reprojection_rms(model, axis_angle_to_matrix(om_try), t_try, pts, pix, w)
            if rms_try < best_rms:
                omega, trans = om_try, t_try
                gain = best_rms - rms_try
                best_rms = rms_try
                best = (omega.copy(), trans.copy())
                improved = True
                if gain < 1e-14 * (1.0 + best_rms):
                    converged = True
                break
            step *= 0.5
        if not improved or converged:
            converged = converged or not improved and best_rms <= rms_dlt
            break

    omega, trans = best
    pose = RigidTransform(axis_angle_to_matrix(omega), trans)
    if return_report:
        return pose, PnPReport(rms_dlt=rms_dlt, rms_refined=best_rms,
                               iterations=iters, converged=bool(converged))
    return pose
