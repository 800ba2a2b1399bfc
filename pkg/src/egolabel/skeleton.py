"""The 15-joint body representation, bone topology, and reference skeleton."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateBone, SchemaError

N_JOINTS = 15

# Fixed joint ordering used by every file format and array in the package.
JOINT_NAMES = (
    "neck",
    "right_shoulder", "right_elbow", "right_wrist",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_hip", "right_knee", "right_ankle", "right_toe",
    "left_hip", "left_knee", "left_ankle", "left_toe",
)

ROOT_JOINT = 0  # neck

# (parent, child) pairs forming a tree rooted at the neck.
DEFAULT_EDGES = (
    (0, 1), (1, 2), (2, 3),          # right arm
    (0, 4), (4, 5), (5, 6),          # left arm
    (0, 7), (7, 8), (8, 9), (9, 10),  # right leg
    (0, 11), (11, 12), (12, 13), (13, 14),  # left leg
)

# Reference bone lengths (mm) of the standard skeleton, one per edge above:
# neck-shoulder 180, upper arm 280, forearm 250, neck-hip 520, thigh 440,
# shin 430, foot 150.
DEFAULT_REFERENCE_LENGTHS = (
    180.0, 280.0, 250.0,
    180.0, 280.0, 250.0,
    520.0, 440.0, 430.0, 150.0,
    520.0, 440.0, 430.0, 150.0,
)

MIN_BONE_LENGTH_MM = 1e-6


@dataclass(frozen=True)
class BoneTopology:
    """Tree of (parent, child) bone edges with reference lengths in mm."""

    edges: tuple
    reference_lengths: np.ndarray

    def __post_init__(self):
        edges = tuple((int(p), int(c)) for p, c in self.edges)
        lengths = np.array(self.reference_lengths, dtype=float)
        n = len(edges) + 1
        if lengths.shape != (len(edges),):
            raise ValueError("one reference length per edge required")
        if np.any(lengths <= 0):
            raise ValueError("reference lengths must be positive")
        children = [c for _, c in edges]
        if sorted(children) != list(range(1, n)):
            raise ValueError("edges must form a tree rooted at joint 0")
        # verify parents are reachable (no cycles, parent occurs before use)
        placed = {0}
        remaining = list(edges)
        order = []
        while remaining:
            progress = [e for e in remaining if e[0] in placed]
            if not progress:
                raise ValueError("edges do not form a connected tree from the root")
            for e in progress:
                placed.add(e[1])
                order.append(e)
                remaining.remove(e)
        lengths.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "reference_lengths", lengths)
        object.__setattr__(self, "_walk_order", tuple(order))

    def walk_order(self):
        """Edges in root-to-leaf order (each parent placed before its children)."""
        return self._walk_order


def default_topology() -> BoneTopology:
    return BoneTopology(DEFAULT_EDGES, np.array(DEFAULT_REFERENCE_LENGTHS))


@dataclass(frozen=True)
class JointSet15:
    """One 15-joint 3D pose (mm, camera frame) with per-joint confidence.

    Confidence 0 marks a missing detection: such joints carry no residual
    in any energy term or metric.
    """

    joints: np.ndarray
    confidence: np.ndarray = field(default=None)

    def __post_init__(self):
        joints = np.array(self.joints, dtype=float)
        if joints.shape != (N_JOINTS, 3):
            raise ValueError(f"joints must be ({N_JOINTS}, 3), got {joints.shape}")
        if self.confidence is None:
            conf = np.ones(N_JOINTS)
        else:
            conf = np.array(self.confidence, dtype=float)
        if conf.shape != (N_JOINTS,):
            raise ValueError(f"confidence must be ({N_JOINTS},), got {conf.shape}")
        if np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("confidence values must lie in [0, 1]")
        joints.flags.writeable = False
        conf.flags.writeable = False
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "confidence", conf)


@dataclass(frozen=True)
class PoseSequence:
    """Ordered frames of JointSet15 at a fixed frame rate."""

    frames: tuple
    frame_rate: float = 25.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("a pose sequence must contain at least one frame")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def as_array(self) -> np.ndarray:
        """(B, 15, 3) joint array."""
        return np.stack([f.joints for f in self.frames])

    def conf_array(self) -> np.ndarray:
        """(B, 15) confidence array."""
        return np.stack([f.confidence for f in self.frames])

    @staticmethod
    def from_array(joints: np.ndarray, conf: np.ndarray = None,
                   frame_rate: float = 25.0) -> "PoseSequence":
        joints = np.asarray(joints, dtype=float)
        frames = []
        for i in range(joints.shape[0]):
            c = None if conf is None else conf[i]
            frames.append(JointSet15(joints[i], c))
        return PoseSequence(tuple(frames), frame_rate)


def bone_lengths(pose: JointSet15, topo: BoneTopology) -> np.ndarray:
    """Euclidean length of each bone edge, in edge order (mm)."""
    parents = np.array([p for p, _ in topo.edges])
    children = np.array([c for _, c in topo.edges])
    diffs = pose.joints[children] - pose.joints[parents]
    return np.linalg.norm(diffs, axis=1)


def rescale_to_skeleton(pose: JointSet15, topo: BoneTopology) -> JointSet15:
    """Re-place every joint at its reference bone length, keeping directions.

    The root joint stays fixed; walking the tree from the root, each child
    is moved along the original parent->child direction to the reference
    length. Raises DegenerateBone when a bone is too short to orient.
    """
    lengths = dict(zip(topo.edges, topo.reference_lengths))
    out = np.array(pose.joints, dtype=float)
    for parent, child in topo.walk_order():
        direction = pose.joints[child] - pose.joints[parent]
        norm = np.linalg.norm(direction)
        if norm < MIN_BONE_LENGTH_MM:
            raise DegenerateBone(
                f"bone {JOINT_NAMES[parent]}->{JOINT_NAMES[child]} has length {norm:.2g} mm")
        out[child] = out[parent] + direction * (lengths[(parent, child)] / norm)
    return JointSet15(out, pose.confidence)


# ---------------------------------------------------------------------------
# pose sequence JSON I/O
# ---------------------------------------------------------------------------
# Schema: {"frames": [{"joints": [[x,y,z] x15], "conf": [c x15]}, ...],
#          "frame_rate": f}
# plus optional keys "tags" (per-frame action tag) and "cameras" used by the
# evaluation CLI and the synthetic ground-truth sidecar.

def save_pose_sequence(path, seq: PoseSequence, tags=None, cameras=None) -> None:
    data = {
        "frames": [
            {"joints": [[float(v) for v in j] for j in f.joints],
             "conf": [float(c) for c in f.confidence]}
            for f in seq.frames
        ],
        "frame_rate": float(seq.frame_rate),
    }
    if tags is not None:
        data["tags"] = list(tags)
    if cameras is not None:
        data["cameras"] = [
            {"R": [float(v) for v in c.rotation.reshape(-1)],
             "t": [float(v) for v in c.translation]}
            for c in cameras
        ]
    Path(path).write_text(json.dumps(data))


def load_pose_sequence(path):
    """Load a PoseSequence; returns (sequence, tags or None)."""
    try:
        data = json.loads(Path(path).read_text())
        frames = []
        for f in data["frames"]:
            joints = np.array(f["joints"], dtype=float)
            conf = np.array(f.get("conf", np.ones(N_JOINTS)), dtype=float)
            frames.append(JointSet15(joints, conf))
        seq = PoseSequence(tuple(frames), float(data.get("frame_rate", 25.0)))
        tags = data.get("tags")
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad pose file {path}: {exc}") from exc
    return seq, tags
