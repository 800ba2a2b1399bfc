"""Pluggable motion prior: identity pass-through or a PCA linear subspace.

The optimizer only needs a differentiable decoder z -> pose window; a
linear one keeps gradients exact. A learned decoder can implement the
same decode/encode/latent_dim interface later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InsufficientData, SchemaError
from .skeleton import N_JOINTS, PoseSequence

_FRAME_DIM = N_JOINTS * 3


@dataclass(frozen=True)
class MotionPrior:
    """Linear motion decoder over windows of window_len frames.

    kind "identity": z is the flattened window itself (latent_dim = B*45).
    kind "linear_subspace": decode(z) = mean + basis.T @ z with orthonormal
    basis rows (K, B*45).
    """

    kind: str
    window_len: int
    latent_dim: int
    mean: np.ndarray
    basis: np.ndarray = None
    frame_rate: float = 25.0

    def __post_init__(self):
        if self.kind not in ("identity", "linear_subspace"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        dim = self.window_len * _FRAME_DIM
        mean = np.array(self.mean, dtype=float)
        if mean.shape != (dim,):
            raise ValueError(f"mean must have shape ({dim},)")
        mean.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        if self.kind == "identity":
            if self.latent_dim != dim or self.basis is not None:
                raise ValueError("identity prior must have latent_dim = B*45 and no basis")
        else:
            basis = np.array(self.basis, dtype=float)
            if basis.shape != (self.latent_dim, dim):
                raise ValueError(f"basis must have shape ({self.latent_dim}, {dim})")
            gram = basis @ basis.T
            if np.linalg.norm(gram - np.eye(self.latent_dim)) > 1e-9 * self.latent_dim:
                raise ValueError("basis rows must be orthonormal")
            basis.flags.writeable = False
            object.__setattr__(self, "basis", basis)


def identity_prior(window_len: int, frame_rate: float = 25.0) -> MotionPrior:
    dim = window_len * _FRAME_DIM
    return MotionPrior(kind="identity", window_len=window_len, latent_dim=dim,
                       mean=np.zeros(dim), frame_rate=frame_rate)


def fit_linear_subspace(motions, latent_dim: int) -> MotionPrior:
    """PCA over flattened training windows.

    motions: list of PoseSequence, all of the same length B. Requires at
    least latent_dim + 1 windows. The basis rows are the top-K principal
    directions (orthonormal), so reconstruction error on the training data
    is minimal among rank-K linear models.
    """
    if not motions:
        raise InsufficientData("no training windows")
    b = len(motions[0])
    if any(len(m) != b for m in motions):
        raise InsufficientData("training windows must all have the same length")
    if len(motions) < latent_dim + 1:
        raise InsufficientData(
            f"need at least {latent_dim + 1} windows to fit {latent_dim} components")
    dim = b * _FRAME_DIM
    if not (1 <= latent_dim <= dim):
        raise ValueError(f"latent_dim must be in [1, {dim}]")
    data = np.stack([m.as_array().reshape(-1) for m in motions])
    mean = data.mean(axis=0)
    _, _, vt = np.linalg.svd(data - mean, full_matrices=False)
    if vt.shape[0] < latent_dim:
        # pad with an arbitrary orthonormal completion of the data span
        full = np.linalg.svd(np.eye(dim) - vt.T @ vt)[0].T
        vt = np.vstack([vt, full[: latent_dim - vt.shape[0]]])
    return MotionPrior(kind="linear_subspace", window_len=b, latent_dim=latent_dim,
                       mean=mean, basis=vt[:latent_dim],
                       frame_rate=motions[0].frame_rate)


def decode(prior: MotionPrior, z: np.ndarray) -> PoseSequence:
    """Latent vector -> pose window (B, 15, 3)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (prior.latent_dim,):
        raise DimensionMismatch(
            f"z must have shape ({prior.latent_dim},), got {z.shape}")
    if prior.kind == "identity":
        flat = z
    else:
        flat = prior.mean + prior.basis.T @ z
    joints = flat.reshape(prior.window_len, N_JOINTS, 3)
    return PoseSequence.from_array(joints, frame_rate=prior.frame_rate)


def encode(prior: MotionPrior, poses: PoseSequence) -> np.ndarray:
    """Pose window -> latent vector (least-squares projection)."""
    if len(poses) != prior.window_len:
        raise DimensionMismatch(
            f"pose window must have {prior.window_len} frames, got {len(poses)}")
    flat = poses.as_array().reshape(-1)
    if prior.kind == "identity":
        return flat
    return prior.basis @ (flat - prior.mean)


def decode_gradient(prior: MotionPrior, grad_flat: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. the flattened poses back to the latent vector."""
    if prior.kind == "identity":
        return grad_flat
    return prior.basis @ grad_flat


def save_prior(path, prior: MotionPrior) -> None:
    data = {
        "kind": prior.kind,
        "window_len": prior.window_len,
        "latent_dim": prior.latent_dim,
        "frame_rate": prior.frame_rate,
        "mean": [float(v) for v in prior.mean],
    }
    if prior.basis is not None:
        data["basis"] = [[float(v) for v in row] for row in prior.basis]
    Path(path).write_text(json.dumps(data))


def load_prior(path) -> MotionPrior:
    try:
        data = json.loads(Path(path).read_text())
        basis = data.get("basis")
        return MotionPrior(
            kind=data["kind"],
            window_len=int(data["window_len"]),
            latent_dim=int(data["latent_dim"]),
            mean=np.array(data["mean"], dtype=float),
            basis=None if basis is None else np.array(basis, dtype=float),
            frame_rate=float(data.get("frame_rate", 25.0)),
        )
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad prior file {path}: {exc}") from exc
