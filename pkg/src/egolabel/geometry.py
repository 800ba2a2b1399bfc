"""Rigid transforms, rotation parameterization, and the two camera models.

Conventions used throughout:
  - points are 3-vectors in millimeters, pixels are 2-vectors (u, v)
  - RigidTransform.apply(p) = R @ p + t
  - the fisheye model follows the omnidirectional radial-polynomial form:
    a sensor-plane point (u', v') maps to the ray (u', v', f(rho)) with
    rho = sqrt(u'^2 + v'^2) and f(rho) = a0 + a2 rho^2 + a3 rho^3 + a4 rho^4;
    image pixel = affine @ (u', v') + center.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BehindCamera, OutsideFieldOfView, SchemaError

ORTHONORMAL_TOL = 1e-9
MIN_PINHOLE_DEPTH_MM = 1e-6


def _as_array(value, shape, name: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose: 3x3 rotation plus translation in millimeters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_array(self.rotation, (3, 3), "rotation")
        t = _as_array(self.translation, (3,), "translation")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a stack (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def is_orthonormal(self, tol: float = ORTHONORMAL_TOL) -> bool:
        r = self.rotation
        err = np.linalg.norm(r.T @ r - np.eye(3))
        return bool(err < tol and np.linalg.det(r) > 0)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform applying b first, then a: compose(a, b).apply(p) = a.apply(b.apply(p))."""
    return RigidTransform(a.rotation @ b.rotation,
                          a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in Frobenius norm (polar projection onto SO(3))."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=float))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


# ---------------------------------------------------------------------------
# axis-angle parameterization
# ---------------------------------------------------------------------------

def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def axis_angle_to_matrix(omega: np.ndarray) -> np.ndarray:
    """Rodrigues formula; orthonormal with det +1 for any finite input."""
    omega = _as_array(omega, (3,), "omega")
    theta2 = float(omega @ omega)
    theta = np.sqrt(theta2)
    k = _skew(omega)
    if theta < 1e-6:
        # Taylor series of sin(t)/t and (1-cos(t))/t^2
        a = 1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0
        b = 0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * k + b * (k @ k)


def matrix_to_axis_angle(rotation: np.ndarray) -> np.ndarray:
    """Log map; inverse of axis_angle_to_matrix for angles in [0, pi)."""
    r = _as_array(rotation, (3, 3), "rotation")
    trace = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    theta = float(np.arccos(trace))
    if theta < 1e-7:
        # first order: R ~ I + skew(omega)
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta > np.pi - 1e-5:
        # near pi the skew part vanishes; recover axis from the symmetric part
        m = (r + np.eye(3)) * 0.5
        axis = np.sqrt(np.maximum(np.diagonal(m), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            axis = m[:, k] / axis[k]
        axis /= max(np.linalg.norm(axis), 1e-30)
        # fix sign with the (possibly tiny) skew part
        skew = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        if skew @ axis < 0:
            axis = -axis
        return theta * axis
    axis = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return theta / (2.0 * np.sin(theta)) * axis


def axis_angle_jacobian(omega: np.ndarray) -> np.ndarray:
    """Derivative of the rotation matrix w.r.t. the axis-angle vector.

    Returns (3, 3, 3) where [k] is dR/d omega_k.
    """
    omega = _as_array(omega, (3,), "omega")
    theta2 = float(omega @ omega)
    jac = np.empty((3, 3, 3))
    if theta2 < 1e-14:
        for k in range(3):
            e = np.zeros(3)
            e[k] = 1.0
            jac[k] = _skew(e)
        return jac
    r = axis_angle_to_matrix(omega)
    k_omega = _skew(omega)
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1.0
        v = np.cross(omega, (np.eye(3) - r) @ e)
        jac[k] = (omega[k] * k_omega + _skew(v)) @ r / theta2
    return jac


# ---------------------------------------------------------------------------
# pinhole camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PinholeModel:
    """Ideal pinhole intrinsics (no distortion)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


def project_pinhole(model: PinholeModel, cam: RigidTransform, point: np.ndarray) -> np.ndarray:
    """Project a 3D point (mm) through cam into pixels, with perspective division.

    Raises BehindCamera when the transformed depth is <= 1e-6 mm.
    """
    q = cam.apply(_as_array(point, (3,), "point"))
    if q[2] <= MIN_PINHOLE_DEPTH_MM:
        raise BehindCamera(f"point depth {q[2]:.3g} mm is not in front of the camera")
    return np.array([model.fx * q[0] / q[2] + model.cx,
                     model.fy * q[1] / q[2] + model.cy])


def project_pinhole_batch(model: PinholeModel, rotation: np.ndarray,
                          translation: np.ndarray, points: np.ndarray):
    """Vectorized pinhole projection. points (..., 3) -> (pixels (..., 2), valid (...,)).

    Points at depth <= 1e-6 mm get valid=False and an unspecified pixel value.
    """
    q = points @ rotation.T + translation
    z = q[..., 2]
    valid = z > MIN_PINHOLE_DEPTH_MM
    zsafe = np.where(valid, z, 1.0)
    pix = np.stack([model.fx * q[..., 0] / zsafe + model.cx,
                    model.fy * q[..., 1] / zsafe + model.cy], axis=-1)
    return pix, valid


# ---------------------------------------------------------------------------
# fisheye (omnidirectional radial polynomial) camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FisheyeModel:
    """Radial-polynomial omnidirectional model.

    poly holds (a0, a2, a3, a4); the linear coefficient is fixed to zero.
    The sign of a0 decides which half-space is "forward": rays are
    (u', v', f(rho)), so on-axis points map forward along sign(a0) * z.
    """

    poly: np.ndarray
    center: np.ndarray
    affine: np.ndarray
    image_radius: float

    def __post_init__(self):
        poly = _as_array(self.poly, (4,), "poly")
        center = _as_array(self.center, (2,), "center")
        affine = _as_array(self.affine, (2, 2), "affine")
        if poly[0] == 0.0:
            raise ValueError("a0 must be nonzero (fixes the forward direction)")
        if self.image_radius <= 0:
            raise ValueError("image_radius must be positive")
        if abs(np.linalg.det(affine)) < 1e-12:
            raise ValueError("affine stretch matrix must be invertible")
        for arr in (poly, center, affine):
            arr.flags.writeable = False
        object.__setattr__(self, "poly", poly)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "affine", affine)

    def radial(self, rho):
        """f(rho) = a0 + a2 rho^2 + a3 rho^3 + a4 rho^4 (vectorized)."""
        a0, a2, a3, a4 = self.poly
        rho = np.asarray(rho, dtype=float)
        return a0 + rho * rho * (a2 + rho * (a3 + rho * a4))

    def radial_deriv(self, rho):
        a0, a2, a3, a4 = self.poly
        rho = np.asarray(rho, dtype=float)
        return rho * (2.0 * a2 + rho * (3.0 * a3 + rho * 4.0 * a4))


_RADIUS_SCAN_STEPS = 128
_BISECT_ITERS = 48
_NEWTON_POLISH = 3


def _solve_fisheye_radius(model: FisheyeModel, r: np.ndarray, z: np.ndarray):
    """Smallest rho in (0, image_radius] with f(rho) * r = z * rho.

    r is the planar radius of the camera point, z its axial coordinate.
    Bracketing grid scan, then bisection, then a few Newton polish steps.
    Returns (rho, found) arrays; vectorized over inputs.
    """
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    rmax = model.image_radius

    grid = np.linspace(0.0, rmax, _RADIUS_SCAN_STEPS + 1)
    # g has shape (steps+1, n): g(rho) = f(rho) * r - z * rho
    f_grid = model.radial(grid)
    g = f_grid[:, None] * r[None, :] - grid[:, None] * z[None, :]
    sign_change = g[:-1] * g[1:] <= 0.0
    found = sign_change.any(axis=0)
    first = np.argmax(sign_change, axis=0)

    lo = grid[first]
    hi = grid[first + 1]
    lo = np.where(found, lo, 0.0)
    hi = np.where(found, hi, rmax)
    g_lo = model.radial(lo) * r - lo * z
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        g_mid = model.radial(mid) * r - mid * z
        take_lo = g_lo * g_mid > 0.0
        lo = np.where(take_lo, mid, lo)
        g_lo = np.where(take_lo, g_mid, g_lo)
        hi = np.where(take_lo, hi, mid)
    rho = 0.5 * (lo + hi)
    for _ in range(_NEWTON_POLISH):
        g_val = model.radial(rho) * r - rho * z
        g_der = model.radial_deriv(rho) * r - z
        step = np.where(np.abs(g_der) > 1e-30, g_val / np.where(g_der == 0, 1.0, g_der), 0.0)
        rho = np.clip(rho - step, lo, hi)
    return rho, found


def project_fisheye_batch(model: FisheyeModel, points: np.ndarray):
    """Vectorized fisheye projection. points (n, 3) -> (pixels (n, 2), valid (n,))."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r = np.hypot(x, y)
    a0 = model.poly[0]

    on_axis = r < 1e-9
    rho, found = _solve_fisheye_radius(model, r, z)
    valid = found & ~on_axis
    # on-axis points are valid only on the forward side
    axis_ok = on_axis & (z * a0 > 0)

    rsafe = np.where(r > 0, r, 1.0)
    scale = np.where(valid, rho / rsafe, 0.0)
    uv = np.stack([x * scale, y * scale], axis=-1)
    pix = uv @ model.affine.T + model.center
    valid_all = valid | axis_ok
    return pix, valid_all


def project_fisheye_batch_grad(model: FisheyeModel, points: np.ndarray):
    """Projection plus Jacobian d pixel / d point, shape (n, 2, 3).

    The radial root rho(r, z) is differentiated implicitly:
    g(rho) = f(rho) r - z rho = 0 gives
    d rho/d r = -f(rho) / (f'(rho) r - z), d rho/d z = rho / (f'(rho) r - z).
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    r = np.hypot(x, y)
    a0 = model.poly[0]
    n = pts.shape[0]

    on_axis = r < 1e-9
    rho, found = _solve_fisheye_radius(model, r, z)
    valid = (found & ~on_axis) | (on_axis & (z * a0 > 0))

    juv = np.zeros((n, 2, 3))
    zsafe = np.where(z == 0, 1.0, z)

    # general case
    gen = found & ~on_axis
    rsafe = np.where(r > 0, r, 1.0)
    denom = model.radial_deriv(rho) * r - z
    denom = np.where(np.abs(denom) > 1e-30, denom, 1e-30)
    drho_dr = -model.radial(rho) / denom
    drho_dz = rho / denom
    cx, cy = x / rsafe, y / rsafe          # cos/sin of the azimuth
    rho_r = rho / rsafe
    # u' = rho * x / r, v' = rho * y / r
    juv[:, 0, 0] = np.where(gen, cx * cx * drho_dr + rho_r * cy * cy, juv[:, 0, 0])
    juv[:, 0, 1] = np.where(gen, cx * cy * drho_dr - rho_r * cx * cy, juv[:, 0, 1])
    juv[:, 0, 2] = np.where(gen, cx * drho_dz, juv[:, 0, 2])
    juv[:, 1, 0] = np.where(gen, cy * cx * drho_dr - rho_r * cy * cx, juv[:, 1, 0])
    juv[:, 1, 1] = np.where(gen, cy * cy * drho_dr + rho_r * cx * cx, juv[:, 1, 1])
    juv[:, 1, 2] = np.where(gen, cy * drho_dz, juv[:, 1, 2])

    # on-axis limit: u' = a0 x / z, v' = a0 y / z
    ax = on_axis & (z * a0 > 0)
    juv[:, 0, 0] = np.where(ax, a0 / zsafe, juv[:, 0, 0])
    juv[:, 1, 1] = np.where(ax, a0 / zsafe, juv[:, 1, 1])

    scale = np.where(found & ~on_axis, rho / rsafe, 0.0)
    uv = np.stack([x * scale, y * scale], axis=-1)
    pix = uv @ model.affine.T + model.center
    jac = np.einsum("ab,nbc->nac", model.affine, juv)
    return pix, valid, jac


def project_fisheye(model: FisheyeModel, point: np.ndarray) -> np.ndarray:
    """Project a single 3D point (mm) into fisheye pixels.

    Raises OutsideFieldOfView when no radius within the image solves the
    projection, and ValueError for points at the camera origin.
    """
    p = _as_array(point, (3,), "point")
    if np.linalg.norm(p) < 1e-6:
        raise ValueError("point too close to the camera origin")
    pix, valid = project_fisheye_batch(model, p[None, :])
    if not valid[0]:
        raise OutsideFieldOfView("point outside the fisheye field of view")
    return pix[0]


def unproject_fisheye(model: FisheyeModel, pixel: np.ndarray, distance: float) -> np.ndarray:
    """3D point at the given Euclidean distance (mm) along the pixel's ray."""
    if distance <= 0:
        raise ValueError("distance must be positive")
    pix = _as_array(pixel, (2,), "pixel")
    uv = np.linalg.solve(model.affine, pix - model.center)
    rho = float(np.hypot(uv[0], uv[1]))
    if rho > model.image_radius:
        raise OutsideFieldOfView(f"pixel radius {rho:.1f} exceeds {model.image_radius}")
    ray = np.array([uv[0], uv[1], float(model.radial(rho))])
    norm = np.linalg.norm(ray)
    if norm < 1e-30:
        raise OutsideFieldOfView("degenerate ray")
    return ray * (distance / norm)


# ---------------------------------------------------------------------------
# calibration file I/O and the synthetic default calibration
# ---------------------------------------------------------------------------

def default_pinhole() -> PinholeModel:
    """Synthetic external camera: 1280x960-ish sensor."""
    return PinholeModel(fx=1200.0, fy=1200.0, cx=640.0, cy=480.0)


def default_fisheye() -> FisheyeModel:
    """Synthetic head-mounted fisheye, near-equidistant with ~115 deg half FOV.

    Built from the series of rho / tan(rho / f) around f = 160 px/rad, so
    pixel radius grows roughly linearly with the field angle.
    """
    f = 160.0
    return FisheyeModel(
        poly=np.array([f, -1.0 / (3.0 * f), 0.0, -1.0 / (45.0 * f ** 3)]),
        center=np.array([320.0, 320.0]),
        affine=np.eye(2),
        image_radius=320.0,
    )


def save_calibration(path, pinhole: PinholeModel, fisheye: FisheyeModel) -> None:
    data = {
        "pinhole": {"fx": pinhole.fx, "fy": pinhole.fy, "cx": pinhole.cx, "cy": pinhole.cy},
        "fisheye": {
            "poly": [float(v) for v in fisheye.poly],
            "center": [float(v) for v in fisheye.center],
            "affine": [[float(v) for v in row] for row in fisheye.affine],
            "image_radius": float(fisheye.image_radius),
        },
    }
    Path(path).write_text(json.dumps(data, indent=2))


def load_calibration(path):
    """Load (PinholeModel, FisheyeModel) from the calibration JSON file."""
    try:
        data = json.loads(Path(path).read_text())
        ph = data["pinhole"]
        fe = data["fisheye"]
        pinhole = PinholeModel(fx=float(ph["fx"]), fy=float(ph["fy"]),
                               cx=float(ph["cx"]), cy=float(ph["cy"]))
        fisheye = FisheyeModel(poly=np.array(fe["poly"], dtype=float),
                               center=np.array(fe["center"], dtype=float),
                               affine=np.array(fe["affine"], dtype=float),
                               image_radius=float(fe["image_radius"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad calibration file {path}: {exc}") from exc
    return pinhole, fisheye
