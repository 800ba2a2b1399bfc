"""Deterministic synthetic scenarios with exact ground truth.

The generator builds a smooth ground-truth 15-joint motion with exact
reference bone lengths, attaches a fisheye camera above the neck and a
static external pinhole camera, synthesizes all observations by exact
projection, and then applies the configured corruption. Everything is a
pure function of the seed.

World frame: x lateral (right), y up, z walking direction; millimeters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .geometry import (FisheyeModel, PinholeModel, RigidTransform,
                       axis_angle_to_matrix, compose, default_fisheye,
                       default_pinhole, invert, project_fisheye_batch,
                       project_pinhole_batch)
from .pipeline import FrameObservation, SequenceDataset
from .skeleton import (BoneTopology, JointSet15, N_JOINTS, PoseSequence,
                       default_topology, rescale_to_skeleton)

MOTION_KINDS = ("static", "walk_cycle", "random_smooth")
OCCLUSION_KINDS = ("none", "lower_body_ego", "hands_ext")

# joint groups hidden per occlusion kind (view encoded by the kind name)
LOWER_BODY_JOINTS = (7, 8, 9, 10, 11, 12, 13, 14)   # hips, knees, ankles, toes
HAND_JOINTS = (3, 6)                                 # wrists


@dataclass(frozen=True)
class ScenarioConfig:
    n_frames: int = 50
    frame_rate: float = 25.0
    motion_kind: str = "walk_cycle"
    occlusion: str = "none"
    seed: int = 0
    noise_ego3d_mm: float = 30.0
    noise_ego2d_px: float = 2.0
    noise_ext2d_px: float = 1.0
    noise_ext3d_mm: float = 20.0
    slam_scale_error: float = 0.0   # perturbs SLAM translation magnitudes

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        if self.motion_kind not in MOTION_KINDS:
            raise ValueError(f"motion_kind must be one of {MOTION_KINDS}")
        if self.occlusion not in OCCLUSION_KINDS:
            raise ValueError(f"occlusion must be one of {OCCLUSION_KINDS}")


@dataclass(frozen=True)
class Scenario:
    gt_poses: PoseSequence          # ego-camera frame, the optimization target
    gt_cameras: tuple               # per-frame ego->external transforms
    dataset: SequenceDataset
    config: ScenarioConfig


# neutral stance offsets from the neck (x lateral, y up, z forward), mm
_NEUTRAL_OFFSETS = np.array([
    [0.0, 0.0, 0.0],          # neck
    [170.0, -60.0, 0.0],      # right shoulder
    [200.0, -330.0, 10.0],    # right elbow
    [210.0, -560.0, 30.0],    # right wrist
    [-170.0, -60.0, 0.0],     # left shoulder
    [-200.0, -330.0, 10.0],   # left elbow
    [-210.0, -560.0, 30.0],   # left wrist
    [100.0, -510.0, 0.0],     # right hip
    [105.0, -940.0, 10.0],    # right knee
    [110.0, -1360.0, -10.0],  # right ankle
    [110.0, -1420.0, 130.0],  # right toe
    [-100.0, -510.0, 0.0],    # left hip
    [-105.0, -940.0, 10.0],   # left knee
    [-110.0, -1360.0, -10.0],  # left ankle
    [-110.0, -1420.0, 130.0],  # left toe
])

_NECK_HEIGHT = 1450.0
_GAIT_HZ = 0.9
_WALK_SPEED = 900.0      # mm/s

# sinusoidal swing amplitude (mm, forward direction) per joint; arms in
# counter-phase with the same-side leg
_SWING_AMP = np.array([0.0,
                       0.0, 110.0, 170.0,
                       0.0, 110.0, 170.0,
                       0.0, 140.0, 210.0, 230.0,
                       0.0, 140.0, 210.0, 230.0])
_SWING_PHASE = np.array([0.0,
                         np.pi, np.pi, np.pi,
                         0.0, 0.0, 0.0,
                         0.0, 0.0, 0.0, 0.0,
                         np.pi, np.pi, np.pi, np.pi])


def _world_joints(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """(B, 15, 3) ground-truth joints in the world frame."""
    t = np.arange(cfg.n_frames) / cfg.frame_rate
    base = _NEUTRAL_OFFSETS[None, :, :] + np.array([0.0, _NECK_HEIGHT, 0.0])
    joints = np.repeat(base, cfg.n_frames, axis=0)

    if cfg.motion_kind == "static":
        return joints

    if cfg.motion_kind == "walk_cycle":
        phase = 2.0 * np.pi * _GAIT_HZ * t
        joints[:, :, 2] += _SWING_AMP[None, :] * np.sin(phase[:, None] + _SWING_PHASE[None, :])
        # knees and ankles lift during the swing phase
        lift = np.maximum(0.0, np.sin(phase[:, None] + _SWING_PHASE[None, :]))
        lift_amp = np.zeros(N_JOINTS)
        lift_amp[[8, 9, 10, 12, 13, 14]] = (40.0, 70.0, 70.0, 40.0, 70.0, 70.0)
        joints[:, :, 1] += lift_amp[None, :] * lift
        # whole-body translation, lateral sway, vertical bob
        joints[:, :, 2] += (_WALK_SPEED * t)[:, None]
        joints[:, :, 0] += 25.0 * np.sin(phase)[:, None]
        joints[:, :, 1] += 20.0 * np.sin(2.0 * phase)[:, None]
        return joints

    # random_smooth: seeded low-frequency sinusoids on every coordinate
    n_modes = 3
    amp = rng.normal(0.0, 35.0, size=(n_modes, N_JOINTS, 3))
    amp[:, 0, :] *= 0.3   # keep the root calmer
    freq = rng.uniform(0.3, 1.2, size=n_modes)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=(n_modes, N_JOINTS, 3))
    for k in range(n_modes):
        joints += amp[k] * np.sin(2.0 * np.pi * freq[k] * t[:, None, None] + theta[k])
    return joints


def _ego_camera_world(cfg: ScenarioConfig, neck_w: np.ndarray, idx: int) -> RigidTransform:
    """World -> ego-camera transform for one frame.

    The camera sits slightly above and ahead of the neck, looking down
    (+z of the camera points toward the body), with gait-locked bobbing.
    """
    # camera axes in world coordinates: x right, y forward, z down
    r_cam_to_world = np.array([[1.0, 0.0, 0.0],
                               [0.0, 0.0, -1.0],
                               [0.0, 1.0, 0.0]])
    if cfg.motion_kind != "static":
        phase = 2.0 * np.pi * _GAIT_HZ * idx / cfg.frame_rate
        pitch = axis_angle_to_matrix(np.array([0.06 * np.sin(phase), 0.0, 0.0]))
        yaw = axis_angle_to_matrix(np.array([0.0, 0.04 * np.sin(0.5 * phase), 0.0]))
        r_cam_to_world = r_cam_to_world @ pitch @ yaw
    position = neck_w + np.array([0.0, 160.0, 30.0])
    r = r_cam_to_world.T
    return RigidTransform(r, -r @ position)


def _ext_camera_world() -> RigidTransform:
    """World -> external-camera transform (static, facing the walker)."""
    r = np.array([[1.0, 0.0, 0.0],
                  [0.0, -1.0, 0.0],
                  [0.0, 0.0, -1.0]])
    position = np.array([0.0, 1100.0, 5200.0])
    return RigidTransform(r, -r @ position)


def _random_rigid(rng: np.random.Generator) -> RigidTransform:
    omega = rng.normal(0.0, 1.0, 3)
    return RigidTransform(axis_angle_to_matrix(omega), rng.normal(0.0, 500.0, 3))


def gen_scenario(cfg: ScenarioConfig) -> Scenario:
    """Generate ground truth plus a corrupted observation dataset.

    Random draws happen in a fixed order so the same seed is bit-identical.
    """
    rng = np.random.default_rng(cfg.seed)
    topo = default_topology()
    fisheye = default_fisheye()
    pinhole = default_pinhole()

    world = _world_joints(cfg, rng)
    # exact reference bone lengths, frame by frame (root stays put)
    world = np.stack([rescale_to_skeleton(JointSet15(w), topo).joints for w in world])

    b = cfg.n_frames
    ego_cams_w = [_ego_camera_world(cfg, world[i, 0], i) for i in range(b)]
    ext_cam_w = _ext_camera_world()

    gt_ego = np.stack([ego_cams_w[i].apply(world[i]) for i in range(b)])
    gt_cameras = tuple(compose(ext_cam_w, invert(ego_cams_w[i])) for i in range(b))

    ego2d = np.empty((b, N_JOINTS, 2))
    ext2d = np.empty((b, N_JOINTS, 2))
    for i in range(b):
        pix, valid = project_fisheye_batch(fisheye, gt_ego[i])
        if not valid.all():
            raise RuntimeError("synthetic motion left the fisheye field of view")
        ego2d[i] = pix
        pix, valid = project_pinhole_batch(pinhole, gt_cameras[i].rotation,
                                           gt_cameras[i].translation, gt_ego[i])
        if not valid.all():
            raise RuntimeError("synthetic motion went behind the external camera")
        ext2d[i] = pix

    # external 3D deliveries live in a deliberately different rigid frame
    ext_frame = _random_rigid(rng)
    ext3d = np.stack([ext_frame.apply(gt_cameras[i].apply(gt_ego[i])) for i in range(b)])

    # corruption, in a fixed draw order
    ego3d = gt_ego + rng.normal(0.0, cfg.noise_ego3d_mm, gt_ego.shape)
    ego2d = ego2d + rng.normal(0.0, cfg.noise_ego2d_px, ego2d.shape)
    ext2d = ext2d + rng.normal(0.0, cfg.noise_ext2d_px, ext2d.shape)
    ext3d = ext3d + rng.normal(0.0, cfg.noise_ext3d_mm, ext3d.shape)

    ego_conf = np.ones((b, N_JOINTS))
    ext_conf = np.ones((b, N_JOINTS))
    if cfg.occlusion == "lower_body_ego":
        ego_conf[:, list(LOWER_BODY_JOINTS)] = 0.0
    elif cfg.occlusion == "hands_ext":
        ext_conf[:, list(HAND_JOINTS)] = 0.0

    slam_scale = 1.0 + cfg.slam_scale_error
    slam = []
    for i in range(b - 1):
        rel = compose(invert(gt_cameras[i]), gt_cameras[i + 1])
        slam.append(RigidTransform(rel.rotation, slam_scale * rel.translation))

    frames = []
    for i in range(b):
        slam_to_next = slam[i] if i < b - 1 else None
        frames.append(FrameObservation(
            frame=i,
            ego2d=ego2d[i], ego2d_conf=ego_conf[i],
            ego3d=ego3d[i], ego3d_conf=ego_conf[i],
            ext2d=ext2d[i], ext2d_conf=ext_conf[i],
            ext3d=ext3d[i], ext3d_conf=ext_conf[i],
            slam_to_next=slam_to_next,
        ))
    dataset = SequenceDataset(frames=tuple(frames), fisheye=fisheye, pinhole=pinhole,
                              frame_rate=cfg.frame_rate,
                              sequence_id=f"synth-{cfg.motion_kind}-{cfg.seed}")
    gt_poses = PoseSequence.from_array(gt_ego, frame_rate=cfg.frame_rate)
    return Scenario(gt_poses=gt_poses, gt_cameras=gt_cameras, dataset=dataset, config=cfg)


def ground_truth_state(scenario: Scenario):
    """WindowState holding the exact poses and cameras (for consistency checks)."""
    from .energy import WindowState

    rot = np.stack([c.rotation for c in scenario.gt_cameras])
    tr = np.stack([c.translation for c in scenario.gt_cameras])
    return WindowState(poses=scenario.gt_poses, cam_rotations=rot, cam_translations=tr)
