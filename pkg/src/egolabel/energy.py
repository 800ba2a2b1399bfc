"""The eight energy terms of the window objective and their analytic gradients.

Every term is a pure function of the optimization state. Units are mixed
by design: reprojection terms are pixels^2, pose/smoothness/bone terms are
mm^2, and the camera-chain term compares 4x4 matrices whose translation
entries are expressed in meters so rotation and translation entries are
commensurate. Balancing the mix is exactly the job of the lambda weights;
the per-term breakdown makes the balance observable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateConfiguration, InsufficientPoints, SchemaError
from .geometry import (FisheyeModel, PinholeModel, RigidTransform,
                       project_fisheye_batch_grad)
from .prior import MotionPrior, decode_gradient
from .skeleton import N_JOINTS, BoneTopology, PoseSequence

# camera-chain translations are compared in meters (mm / 1000)
TRANSLATION_SCALE_MM = 1000.0

TERM_NAMES = ("reproj_ego", "reproj_ext", "pose_ego", "pose_ext",
              "smooth", "bone", "cam_consistency", "cam_orth")


@dataclass(frozen=True)
class EnergyWeights:
    """The eight lambda coefficients of the total objective."""

    lambda_reproj_ego: float = 1.0
    lambda_reproj_ext: float = 1.0
    lambda_pose_ego: float = 1.0
    lambda_pose_ext: float = 1.0
    lambda_smooth: float = 1.0
    lambda_bone: float = 1.0
    lambda_cam_consistency: float = 1.0
    lambda_cam_orth: float = 1.0

    def __post_init__(self):
        vals = self.as_array()
        if np.any(vals < 0):
            raise ValueError("weights must be non-negative")
        if not np.any(vals > 0):
            raise ValueError("at least one weight must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda_reproj_ego, self.lambda_reproj_ext,
                         self.lambda_pose_ego, self.lambda_pose_ext,
                         self.lambda_smooth, self.lambda_bone,
                         self.lambda_cam_consistency, self.lambda_cam_orth])

    def as_dict(self) -> dict:
        return {f"lambda_{name}": float(v)
                for name, v in zip(TERM_NAMES, self.as_array())}

    @staticmethod
    def from_dict(data: dict) -> "EnergyWeights":
        known = {f"lambda_{name}" for name in TERM_NAMES}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown weight keys: {sorted(unknown)}")
        return EnergyWeights(**{k: float(v) for k, v in data.items()})


def save_weights(path, weights: EnergyWeights) -> None:
    Path(path).write_text(json.dumps(weights.as_dict(), indent=2))


def load_weights(path) -> EnergyWeights:
    try:
        return EnergyWeights.from_dict(json.loads(Path(path).read_text()))
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad weights file {path}: {exc}") from exc


@dataclass(frozen=True)
class WindowObservations:
    """All per-frame detector inputs for one B-frame optimization window.

    2D detections carry per-joint confidences; the 3D detections reuse the
    confidence of the same view's 2D channel when loaded from disk.
    slam_rel[i] maps the ego camera frame at i+1 into the frame at i and
    may be None where SLAM dropped out.
    """

    ego2d: np.ndarray          # (B, 15, 2) px
    ego2d_conf: np.ndarray     # (B, 15)
    ego3d: np.ndarray          # (B, 15, 3) mm, detector initialization
    ego3d_conf: np.ndarray     # (B, 15)
    ext2d: np.ndarray          # (B, 15, 2) px
    ext2d_conf: np.ndarray     # (B, 15)
    ext3d: np.ndarray          # (B, 15, 3) mm, arbitrary rigid frame
    ext3d_conf: np.ndarray     # (B, 15)
    slam_rel: tuple            # B-1 of RigidTransform | None
    fisheye: FisheyeModel
    pinhole: PinholeModel
    frame_rate: float = 25.0

    def __post_init__(self):
        b = self.n_frames
        if b < 2:
            raise ValueError("a window needs at least 2 frames")
        shapes = {
            "ego2d": (b, N_JOINTS, 2), "ego2d_conf": (b, N_JOINTS),
            "ego3d": (b, N_JOINTS, 3), "ego3d_conf": (b, N_JOINTS),
            "ext2d": (b, N_JOINTS, 2), "ext2d_conf": (b, N_JOINTS),
            "ext3d": (b, N_JOINTS, 3), "ext3d_conf": (b, N_JOINTS),
        }
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        slam = tuple(self.slam_rel)
        if len(slam) != b - 1:
            raise ValueError(f"slam_rel must have {b - 1} entries")
        for tr in slam:
            if tr is not None and not tr.is_orthonormal(tol=1e-6):
                raise ValueError("slam_rel rotations must be orthonormal within 1e-6")
        object.__setattr__(self, "slam_rel", slam)

    @property
    def n_frames(self) -> int:
        return np.asarray(self.ego2d).shape[0]


@dataclass(frozen=True)
class WindowState:
    """Optimization variables for one window: poses plus camera trajectory.

    cam_rotations/cam_translations map ego-frame points into the external
    camera frame. latent, when set, is the motion-prior vector that decodes
    to these poses.
    """

    poses: PoseSequence
    cam_rotations: np.ndarray    # (B, 3, 3)
    cam_translations: np.ndarray  # (B, 3) mm
    latent: np.ndarray = None

    def __post_init__(self):
        b = len(self.poses)
        if b < 2:
            raise ValueError("a window state needs at least 2 frames")
        rot = np.array(self.cam_rotations, dtype=float)
        tr = np.array(self.cam_translations, dtype=float)
        if rot.shape != (b, 3, 3):
            raise ValueError(f"cam_rotations must be ({b}, 3, 3), got {rot.shape}")
        if tr.shape != (b, 3):
            raise ValueError(f"cam_translations must be ({b}, 3), got {tr.shape}")
        rot.flags.writeable = False
        tr.flags.writeable = False
        object.__setattr__(self, "cam_rotations", rot)
        object.__setattr__(self, "cam_translations", tr)
        if self.latent is not None:
            z = np.array(self.latent, dtype=float)
            z.flags.writeable = False
            object.__setattr__(self, "latent", z)

    @property
    def n_frames(self) -> int:
        return len(self.poses)


@dataclass
class TermResult:
    """Scalar energy plus gradients w.r.t. the state blocks it touches."""

    value: float
    grad_poses: np.ndarray = None   # (B, 15, 3)
    grad_rot: np.ndarray = None     # (B, 3, 3)
    grad_trans: np.ndarray = None   # (B, 3)
    grad_slam_scale: float = 0.0
    dropped: int = 0


def e_reproj_ego(state: WindowState, obs: WindowObservations) -> TermResult:
    """Confidence-weighted squared fisheye reprojection error (px^2).

    Joints whose current 3D position leaves the fisheye field of view
    contribute nothing and are counted as dropped.
    """
    p = state.poses.as_array()
    b = p.shape[0]
    pix, valid, jac = project_fisheye_batch_grad(obs.fisheye, p.reshape(-1, 3))
    conf = obs.ego2d_conf.reshape(-1)
    active = valid & (conf > 0)
    diff = pix - obs.ego2d.reshape(-1, 2)
    w = np.where(active, conf, 0.0)
    value = float((w * (diff * diff).sum(axis=1)).sum())
    grad_flat = 2.0 * w[:, None] * np.einsum("nab,na->nb", jac, diff)
    dropped = int(np.count_nonzero(~valid & (conf > 0)))
    return TermResult(value=value, grad_poses=grad_flat.reshape(b, N_JOINTS, 3),
                      dropped=dropped)


def _pinhole_residuals(state: WindowState, obs: WindowObservations):
    p = state.poses.as_array()
    q = np.einsum("bij,bnj->bni", state.cam_rotations, p) + state.cam_translations[:, None, :]
    z = q[..., 2]
    valid = z > 1e-6
    zs = np.where(valid, z, 1.0)
    proj = np.stack([obs.pinhole.fx * q[..., 0] / zs + obs.pinhole.cx,
                     obs.pinhole.fy * q[..., 1] / zs + obs.pinhole.cy], axis=-1)
    return q, zs, valid, proj


def e_reproj_ext(state: WindowState, obs: WindowObservations) -> TermResult:
    """Squared error between external 2D detections and the projected poses.

    Projects each ego-frame pose through the per-frame camera [R|t] and the
    external pinhole intrinsics (with perspective division). Joints behind
    the camera are dropped and counted.
    """
    p = state.poses.as_array()
    q, zs, valid, proj = _pinhole_residuals(state, obs)
    conf = obs.ext2d_conf
    active = valid & (conf > 0)
    w = np.where(active, conf, 0.0)
    diff = proj - obs.ext2d
    value = float((w * (diff * diff).sum(axis=-1)).sum())

    fx, fy = obs.pinhole.fx, obs.pinhole.fy
    # d proj / d q contracted with 2 w diff -> gradient w.r.t. q, (B, 15, 3)
    gu = 2.0 * w * diff[..., 0]
    gv = 2.0 * w * diff[..., 1]
    gq = np.stack([fx * gu / zs,
                   fy * gv / zs,
                   -(fx * gu * q[..., 0] + fy * gv * q[..., 1]) / zs ** 2], axis=-1)
    grad_poses = np.einsum("bij,bni->bnj", state.cam_rotations, gq)
    grad_rot = np.einsum("bni,bnj->bij", gq, p)
    grad_trans = gq.sum(axis=1)
    dropped = int(np.count_nonzero(~valid & (conf > 0)))
    return TermResult(value=value, grad_poses=grad_poses, grad_rot=grad_rot,
                      grad_trans=grad_trans, dropped=dropped)


def e_pose_ego(state: WindowState, obs: WindowObservations) -> TermResult:
    """Confidence-weighted squared distance to the detector's 3D poses (mm^2)."""
    p = state.poses.as_array()
    diff = p - obs.ego3d
    w = obs.ego3d_conf
    value = float((w * (diff * diff).sum(axis=-1)).sum())
    grad = 2.0 * w[..., None] * diff
    return TermResult(value=value, grad_poses=grad)


def e_pose_ext(state: WindowState, obs: WindowObservations) -> TermResult:
    """Per-frame rigid alignment residual against the external 3D poses (mm^2).

    Each frame's alignment is recomputed from the current state. Because the
    aligning transform minimizes the same weighted objective, the gradient
    treats it as locally constant (envelope theorem). Frames with fewer than
    3 confident external joints, or degenerate geometry, are dropped.
    """
    from .align import procrustes  # local import to avoid a cycle at module load

    p = state.poses.as_array()
    b = p.shape[0]
    value = 0.0
    grad = np.zeros_like(p)
    dropped = 0
    for i in range(b):
        w = obs.ext3d_conf[i]
        try:
            res = procrustes(p[i], obs.ext3d[i], weights=w, with_scale=False)
        except (DegenerateConfiguration, InsufficientPoints):
            dropped += 1
            continue
        rot = res.transform.rotation
        aligned = p[i] @ rot.T + res.transform.translation
        resid = obs.ext3d[i] - aligned
        value += float((w * (resid * resid).sum(axis=1)).sum())
        grad[i] = -2.0 * w[:, None] * (resid @ rot)
    return TermResult(value=value, grad_poses=grad, dropped=dropped)


def e_smooth(state: WindowState) -> TermResult:
    """First-difference (velocity) penalty over the pose sequence (mm^2)."""
    p = state.poses.as_array()
    d = p[1:] - p[:-1]
    value = float((d * d).sum())
    grad = np.zeros_like(p)
    grad[1:] += 2.0 * d
    grad[:-1] -= 2.0 * d
    return TermResult(value=value, grad_poses=grad)


def e_bone(state: WindowState, topo: BoneTopology) -> TermResult:
    """Squared deviation of bone lengths from the reference skeleton (mm^2)."""
    p = state.poses.as_array()
    parents = np.array([e[0] for e in topo.edges])
    children = np.array([e[1] for e in topo.edges])
    d = p[:, children] - p[:, parents]          # (B, 14, 3)
    lengths = np.linalg.norm(d, axis=-1)
    dev = lengths - topo.reference_lengths
    value = float((dev * dev).sum())
    safe = np.where(lengths > 1e-12, lengths, 1.0)
    g_edge = (2.0 * dev / safe)[..., None] * d  # zero direction for zero-length bones
    g_edge = np.where(lengths[..., None] > 1e-12, g_edge, 0.0)
    grad = np.zeros_like(p)
    np.add.at(grad, (slice(None), children), g_edge)
    np.add.at(grad, (slice(None), parents), -g_edge)
    return TermResult(value=value, grad_poses=grad)


def e_cam_consistency(state: WindowState, obs: WindowObservations,
                      slam_scale: float = 1.0) -> TermResult:
    """Chain consistency of the camera trajectory against SLAM increments.

    For each adjacent pair, the squared Frobenius norm of the 4x4 difference
    between (pose_i composed with the SLAM relative transform) and pose_i+1.
    Translation entries are divided by 1000 so they are commensurate with
    rotation entries. Pairs without a SLAM transform contribute nothing.
    """
    rot = state.cam_rotations
    trans = state.cam_translations
    b = rot.shape[0]
    s = TRANSLATION_SCALE_MM
    value = 0.0
    grad_rot = np.zeros_like(rot)
    grad_trans = np.zeros_like(trans)
    grad_scale = 0.0
    dropped = 0
    for i in range(b - 1):
        rel = obs.slam_rel[i]
        if rel is None:
            dropped += 1
            continue
        t_rel = slam_scale * rel.translation
        m = rot[i] @ rel.rotation - rot[i + 1]
        v = (rot[i] @ t_rel + trans[i] - trans[i + 1]) / s
        value += float((m * m).sum() + v @ v)
        grad_rot[i] += 2.0 * m @ rel.rotation.T + 2.0 * np.outer(v, t_rel) / s
        grad_rot[i + 1] -= 2.0 * m
        grad_trans[i] += 2.0 * v / s
        grad_trans[i + 1] -= 2.0 * v / s
        grad_scale += float(2.0 * v @ (rot[i] @ rel.translation) / s)
    return TermResult(value=value, grad_rot=grad_rot, grad_trans=grad_trans,
                      grad_slam_scale=grad_scale, dropped=dropped)


def e_cam_orth(state: WindowState) -> TermResult:
    """Squared Frobenius deviation of each camera rotation from orthonormality."""
    rot = state.cam_rotations
    s = np.einsum("bji,bjk->bik", rot, rot) - np.eye(3)
    value = float((s * s).sum())
    grad = 4.0 * np.einsum("bij,bjk->bik", rot, s)
    return TermResult(value=value, grad_rot=grad)


@dataclass
class EnergyBreakdown:
    """Weighted total plus per-term values, gradients, and dropped counts."""

    total: float
    terms: dict
    grad_poses: np.ndarray
    grad_rot: np.ndarray
    grad_trans: np.ndarray
    grad_latent: np.ndarray = None
    grad_slam_scale: float = 0.0
    dropped: dict = field(default_factory=dict)

    @property
    def dropped_total(self) -> int:
        return int(sum(self.dropped.values()))


def total_energy(state: WindowState, obs: WindowObservations,
                 weights: EnergyWeights, topo: BoneTopology,
                 prior: MotionPrior = None, slam_scale: float = 1.0,
                 skip_cam_orth: bool = False) -> EnergyBreakdown:
    """Weighted sum of the eight terms with the combined gradient.

    When a motion prior is given and the state carries a latent vector, the
    pose gradient is chained through the decoder into grad_latent.
    skip_cam_orth reports the orthonormality term as exactly zero; used by
    the axis-angle rotation mode where it vanishes identically.
    """
    results = {
        "reproj_ego": e_reproj_ego(state, obs),
        "reproj_ext": e_reproj_ext(state, obs),
        "pose_ego": e_pose_ego(state, obs),
        "pose_ext": e_pose_ext(state, obs),
        "smooth": e_smooth(state),
        "bone": e_bone(state, topo),
        "cam_consistency": e_cam_consistency(state, obs, slam_scale),
        "cam_orth": (TermResult(value=0.0) if skip_cam_orth else e_cam_orth(state)),
    }
    lam = weights.as_dict()
    b = state.n_frames
    total = 0.0
    grad_poses = np.zeros((b, N_JOINTS, 3))
    grad_rot = np.zeros((b, 3, 3))
    grad_trans = np.zeros((b, 3))
    grad_scale = 0.0
    terms = {}
    dropped = {}
    for name, res in results.items():
        w = lam[f"lambda_{name}"]
        terms[name] = res.value
        dropped[name] = res.dropped
        total += w * res.value
        if res.grad_poses is not None:
            grad_poses += w * res.grad_poses
        if res.grad_rot is not None:
            grad_rot += w * res.grad_rot
        if res.grad_trans is not None:
            grad_trans += w * res.grad_trans
        grad_scale += w * res.grad_slam_scale
    grad_latent = None
    if prior is not None and state.latent is not None:
        grad_latent = decode_gradient(prior, grad_poses.reshape(-1))
    return EnergyBreakdown(total=float(total), terms=terms, grad_poses=grad_poses,
                           grad_rot=grad_rot, grad_trans=grad_trans,
                           grad_latent=grad_latent, grad_slam_scale=grad_scale,
                           dropped=dropped)
