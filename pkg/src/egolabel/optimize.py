"""First-order minimization of the window objective.

Gradient descent with Armijo backtracking on a single packed variable
vector (latent poses + camera rotations + camera translations). Millimeter
blocks are pre-scaled by 1/1000 inside the vector so one step size suits
all blocks; accepted iterates never increase the energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import pnp_estimate
from .energy import (EnergyBreakdown, EnergyWeights, TERM_NAMES, WindowObservations,
                     WindowState, total_energy)
from .errors import (DegenerateConfiguration, InitializationFailure,
                     InsufficientPoints, SchemaError)
from .geometry import (RigidTransform, axis_angle_jacobian, axis_angle_to_matrix,
                       compose, invert, matrix_to_axis_angle, orthonormalize)
from .prior import MotionPrior, decode, encode, identity_prior
from .skeleton import N_JOINTS, BoneTopology, PoseSequence

MM_SCALE = 1000.0          # mm blocks enter the variable vector in meters
ARMIJO_C = 1e-4
MIN_STEP = 1e-20

ROTATION_MODES = ("axis_angle", "raw_matrix")


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 2000
    step_size: float = 1.0
    tol_rel: float = 1e-8
    rotation_mode: str = "raw_matrix"
    optimize_slam_scale: bool = False
    seed: int = 0            # reserved; the descent itself is deterministic

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol_rel <= 0:
            raise ValueError("tol_rel must be positive")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.rotation_mode not in ROTATION_MODES:
            raise ValueError(f"rotation_mode must be one of {ROTATION_MODES}")

    @staticmethod
    def from_dict(data: dict) -> "OptimizerConfig":
        allowed = {"max_iters", "step_size", "tol_rel", "rotation_mode",
                   "optimize_slam_scale", "seed"}
        unknown = set(data) - allowed
        if unknown:
            raise SchemaError(f"unknown optimizer config keys: {sorted(unknown)}")
        return OptimizerConfig(**data)


def load_optimizer_config(path) -> OptimizerConfig:
    try:
        return OptimizerConfig.from_dict(json.loads(Path(path).read_text()))
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad optimizer config {path}: {exc}") from exc


@dataclass
class OptimizationReport:
    final_state: WindowState
    energy_trace: list
    term_trace: dict
    iterations_used: int
    converged: bool
    dropped_residual_count: int
    initial_energy: float
    final_energy: float
    pre_projection_energy: float
    post_projection_energy: float
    slam_scale: float = 1.0
    initial_terms: dict = field(default_factory=dict)
    final_terms: dict = field(default_factory=dict)


class _Packing:
    """Maps between the flat optimizer vector and (latent, rotations, t)."""

    def __init__(self, b: int, latent_dim: int, rotation_mode: str,
                 optimize_slam_scale: bool):
        self.b = b
        self.latent_dim = latent_dim
        self.rotation_mode = rotation_mode
        self.optimize_slam_scale = optimize_slam_scale
        self.rot_dim = 3 * b if rotation_mode == "axis_angle" else 9 * b
        self.n = latent_dim + self.rot_dim + 3 * b + (1 if optimize_slam_scale else 0)

    def pack(self, latent, rotations, translations, slam_scale=1.0) -> np.ndarray:
        x = np.empty(self.n)
        x[:self.latent_dim] = latent / MM_SCALE
        if self.rotation_mode == "axis_angle":
            rp = np.stack([matrix_to_axis_angle(r) for r in rotations])
            x[self.latent_dim:self.latent_dim + self.rot_dim] = rp.reshape(-1)
        else:
            x[self.latent_dim:self.latent_dim + self.rot_dim] = rotations.reshape(-1)
        off = self.latent_dim + self.rot_dim
        x[off:off + 3 * self.b] = translations.reshape(-1) / MM_SCALE
        if self.optimize_slam_scale:
            x[-1] = slam_scale
        return x

    def unpack(self, x: np.ndarray):
        latent = x[:self.latent_dim] * MM_SCALE
        rp = x[self.latent_dim:self.latent_dim + self.rot_dim]
        if self.rotation_mode == "axis_angle":
            rot_params = rp.reshape(self.b, 3)
            rotations = np.stack([axis_angle_to_matrix(w) for w in rot_params])
        else:
            rot_params = None
            rotations = rp.reshape(self.b, 3, 3)
        off = self.latent_dim + self.rot_dim
        translations = x[off:off + 3 * self.b].reshape(self.b, 3) * MM_SCALE
        slam_scale = float(x[-1]) if self.optimize_slam_scale else 1.0
        return latent, rot_params, rotations, translations, slam_scale

    def pack_gradient(self, breakdown: EnergyBreakdown, rot_params) -> np.ndarray:
        g = np.empty(self.n)
        g[:self.latent_dim] = breakdown.grad_latent * MM_SCALE
        if self.rotation_mode == "axis_angle":
            gr = np.empty((self.b, 3))
            for i in range(self.b):
                jac = axis_angle_jacobian(rot_params[i])  # (3, 3, 3)
                gr[i] = np.einsum("kab,ab->k", jac, breakdown.grad_rot[i])
            g[self.latent_dim:self.latent_dim + self.rot_dim] = gr.reshape(-1)
        else:
            g[self.latent_dim:self.latent_dim + self.rot_dim] = breakdown.grad_rot.reshape(-1)
        off = self.latent_dim + self.rot_dim
        g[off:off + 3 * self.b] = breakdown.grad_trans.reshape(-1) * MM_SCALE
        if self.optimize_slam_scale:
            g[-1] = breakdown.grad_slam_scale
        return g


def _init_cameras(obs: WindowObservations):
    """Per-frame PnP of the detector 3D poses against the external 2D joints.

    Frames whose PnP is degenerate are filled by chaining SLAM transforms
    from the nearest initialized frame (forward, then backward), falling
    back to a plain copy when SLAM is absent too.
    """
    b = obs.n_frames
    cams = [None] * b
    for i in range(b):
        w = obs.ext2d_conf[i] * (obs.ego3d_conf[i] > 0)
        try:
            cams[i] = pnp_estimate(obs.ego3d[i], obs.ext2d[i], obs.pinhole, weights=w)
        except (DegenerateConfiguration, InsufficientPoints):
            cams[i] = None
    if all(c is None for c in cams):
        raise InitializationFailure("PnP failed on every frame of the window")
    for i in range(1, b):
        if cams[i] is None and cams[i - 1] is not None:
            rel = obs.slam_rel[i - 1]
            cams[i] = compose(cams[i - 1], rel) if rel is not None else cams[i - 1]
    for i in range(b - 2, -1, -1):
        if cams[i] is None and cams[i + 1] is not None:
            rel = obs.slam_rel[i]
            cams[i] = compose(cams[i + 1], invert(rel)) if rel is not None else cams[i + 1]
    return cams


def optimize_window(obs: WindowObservations, weights: EnergyWeights,
                    topo: BoneTopology, prior: MotionPrior = None,
                    config: OptimizerConfig = None) -> OptimizationReport:
    """Minimize the window objective from the PnP / encoder initialization.

    The pose block is initialized as encode(prior, detector 3D poses) and
    the cameras by per-frame PnP. Backtracking line search (halving, Armijo
    c = 1e-4) guarantees a non-increasing energy trace; stops on the
    relative-decrease tolerance or the iteration cap. In raw-matrix mode the
    output rotations are polar-projected onto SO(3), with energies reported
    before and after the projection.
    """
    config = config or OptimizerConfig()
    if prior is None:
        prior = identity_prior(obs.n_frames, frame_rate=obs.frame_rate)
    if prior.window_len != obs.n_frames:
        raise ValueError("prior window length does not match the observation window")

    b = obs.n_frames
    init_poses = PoseSequence.from_array(obs.ego3d, conf=obs.ego3d_conf,
                                         frame_rate=obs.frame_rate)
    z0 = encode(prior, init_poses)
    cams = _init_cameras(obs)
    rot0 = np.stack([c.rotation for c in cams])
    t0 = np.stack([c.translation for c in cams])

    packing = _Packing(b, prior.latent_dim, config.rotation_mode,
                       config.optimize_slam_scale)
    skip_orth = config.rotation_mode == "axis_angle"

    def evaluate(x: np.ndarray) -> tuple:
        latent, rot_params, rotations, translations, slam_scale = packing.unpack(x)
        poses = decode(prior, latent)
        state = WindowState(poses=poses, cam_rotations=rotations,
                            cam_translations=translations, latent=latent)
        bd = total_energy(state, obs, weights, topo, prior=prior,
                          slam_scale=slam_scale, skip_cam_orth=skip_orth)
        return bd, state, rot_params

    x = packing.pack(z0, rot0, t0)
    bd, state, rot_params = evaluate(x)
    energy_trace = [bd.total]
    term_trace = {name: [bd.terms[name]] for name in TERM_NAMES}
    initial_energy = bd.total
    initial_terms = dict(bd.terms)

    converged = False
    iterations = 0
    alpha = config.step_size
    for iterations in range(1, config.max_iters + 1):
        grad = packing.pack_gradient(bd, rot_params)
        gnorm2 = float(grad @ grad)
        if gnorm2 <= 1e-24 * (1.0 + abs(bd.total)):
            converged = True
            iterations -= 1
            break
        # adaptive restart: try twice the last accepted step, capped
        alpha = min(2.0 * alpha, config.step_size)
        accepted = False
        while alpha >= MIN_STEP:
            x_try = x - alpha * grad
            bd_try, state_try, rp_try = evaluate(x_try)
            if bd_try.total <= bd.total - ARMIJO_C * alpha * gnorm2:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            converged = False
            iterations -= 1
            break
        prev_total = bd.total
        x, bd, state, rot_params = x_try, bd_try, state_try, rp_try
        energy_trace.append(bd.total)
        for name in TERM_NAMES:
            term_trace[name].append(bd.terms[name])
        rel_drop = (prev_total - bd.total) / max(abs(prev_total), 1e-30)
        if rel_drop < config.tol_rel:
            converged = True
            break

    latent, _, rotations, translations, slam_scale = packing.unpack(x)
    pre_projection_energy = bd.total
    if config.rotation_mode == "raw_matrix":
        rotations = np.stack([orthonormalize(r) for r in rotations])
        final_state = WindowState(poses=state.poses, cam_rotations=rotations,
                                  cam_translations=translations, latent=latent)
        bd_post = total_energy(final_state, obs, weights, topo, prior=prior,
                               slam_scale=slam_scale, skip_cam_orth=False)
        post_projection_energy = bd_post.total
        final_bd = bd_post
    else:
        final_state = state
        post_projection_energy = bd.total
        final_bd = bd

    return OptimizationReport(
        final_state=final_state,
        energy_trace=energy_trace,
        term_trace=term_trace,
        iterations_used=iterations,
        converged=converged,
        dropped_residual_count=final_bd.dropped_total,
        initial_energy=initial_energy,
        final_energy=energy_trace[-1],
        pre_projection_energy=pre_projection_energy,
        post_projection_energy=post_projection_energy,
        slam_scale=slam_scale,
        initial_terms=initial_terms,
        final_terms=dict(final_bd.terms),
    )


def dump_trace_csv(path, report: OptimizationReport) -> None:
    """Write iter, total, and the eight term columns as CSV."""
    lines = ["iter,total," + ",".join(TERM_NAMES)]
    for i, total in enumerate(report.energy_trace):
        cols = [str(i), repr(total)]
        cols += [repr(report.term_trace[name][i]) for name in TERM_NAMES]
        lines.append(",".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")
