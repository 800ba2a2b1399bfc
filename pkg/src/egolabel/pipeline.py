"""End-to-end pseudo-label generation: ingestion, windowing, stitching,
label encoding, and the bootstrapping loop."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .energy import EnergyWeights, WindowObservations
from .errors import InitializationFailure, SchemaError, SequenceTooShort
from .geometry import FisheyeModel, PinholeModel, RigidTransform, project_fisheye_batch
from .optimize import OptimizationReport, OptimizerConfig, optimize_window
from .prior import MotionPrior
from .skeleton import BoneTopology, JointSet15, N_JOINTS, PoseSequence


@dataclass(frozen=True)
class FrameObservation:
    """Per-frame detector outputs. 3D confidences mirror the same view's 2D."""

    frame: int
    ego2d: np.ndarray
    ego2d_conf: np.ndarray
    ego3d: np.ndarray
    ego3d_conf: np.ndarray
    ext2d: np.ndarray
    ext2d_conf: np.ndarray
    ext3d: np.ndarray
    ext3d_conf: np.ndarray
    slam_to_next: RigidTransform = None


@dataclass(frozen=True)
class SequenceDataset:
    """Ordered frames with calibration handles."""

    frames: tuple
    fisheye: FisheyeModel
    pinhole: PinholeModel
    frame_rate: float = 25.0
    sequence_id: str = "sequence"

    def __post_init__(self):
        frames = tuple(self.frames)
        idx = [f.frame for f in frames]
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("frame indices must be strictly increasing")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def replace_ego3d(self, poses) -> "SequenceDataset":
        """New dataset whose detector 3D poses are the given JointSet15 list."""
        if len(poses) != len(self.frames):
            raise ValueError("need one pose per frame")
        frames = []
        for f, p in zip(self.frames, poses):
            frames.append(FrameObservation(
                frame=f.frame,
                ego2d=f.ego2d, ego2d_conf=f.ego2d_conf,
                ego3d=np.array(p.joints), ego3d_conf=np.array(p.confidence),
                ext2d=f.ext2d, ext2d_conf=f.ext2d_conf,
                ext3d=f.ext3d, ext3d_conf=f.ext3d_conf,
                slam_to_next=f.slam_to_next))
        return SequenceDataset(frames=tuple(frames), fisheye=self.fisheye,
                               pinhole=self.pinhole, frame_rate=self.frame_rate,
                               sequence_id=self.sequence_id)


# ---------------------------------------------------------------------------
# dataset JSON-lines I/O
# ---------------------------------------------------------------------------
# One frame per line:
# {"frame": i, "ego2d": [[u,v,c] x15], "ego3d": [[x,y,z] x15],
#  "ext2d": [[u,v,c] x15], "ext3d": [[x,y,z] x15],
#  "slam_to_next": {"R": [9 row-major], "t": [3]} | null}

def save_dataset_jsonl(path, dataset: SequenceDataset) -> None:
    lines = []
    for f in dataset.frames:
        rec = {
            "frame": int(f.frame),
            "ego2d": [[float(u), float(v), float(c)]
                      for (u, v), c in zip(f.ego2d, f.ego2d_conf)],
            "ego3d": [[float(x), float(y), float(z)] for x, y, z in f.ego3d],
            "ext2d": [[float(u), float(v), float(c)]
                      for (u, v), c in zip(f.ext2d, f.ext2d_conf)],
            "ext3d": [[float(x), float(y), float(z)] for x, y, z in f.ext3d],
            "slam_to_next": None if f.slam_to_next is None else {
                "R": [float(v) for v in f.slam_to_next.rotation.reshape(-1)],
                "t": [float(v) for v in f.slam_to_next.translation],
            },
        }
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset_jsonl(path, fisheye: FisheyeModel, pinhole: PinholeModel,
                       frame_rate: float = 25.0, sequence_id: str = None) -> SequenceDataset:
    frames = []
    try:
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            ego2d = np.array(rec["ego2d"], dtype=float)
            ext2d = np.array(rec["ext2d"], dtype=float)
            if ego2d.shape != (N_JOINTS, 3) or ext2d.shape != (N_JOINTS, 3):
                raise ValueError("2D entries must be 15 x [u, v, conf]")
            ego3d = np.array(rec["ego3d"], dtype=float)
            ext3d = np.array(rec["ext3d"], dtype=float)
            if ego3d.shape != (N_JOINTS, 3) or ext3d.shape != (N_JOINTS, 3):
                raise ValueError("3D entries must be 15 x [x, y, z]")
            slam = rec.get("slam_to_next")
            slam_t = None
            if slam is not None:
                slam_t = RigidTransform(np.array(slam["R"], dtype=float).reshape(3, 3),
                                        np.array(slam["t"], dtype=float))
            frames.append(FrameObservation(
                frame=int(rec["frame"]),
                ego2d=ego2d[:, :2], ego2d_conf=ego2d[:, 2],
                ego3d=ego3d, ego3d_conf=ego2d[:, 2],
                ext2d=ext2d[:, :2], ext2d_conf=ext2d[:, 2],
                ext3d=ext3d, ext3d_conf=ext2d[:, 2],
                slam_to_next=slam_t))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad dataset file {path}: {exc}") from exc
    return SequenceDataset(frames=tuple(frames), fisheye=fisheye, pinhole=pinhole,
                           frame_rate=frame_rate,
                           sequence_id=sequence_id or Path(path).stem)


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowSlice:
    offset: int
    observations: WindowObservations


def _window_obs(dataset: SequenceDataset, start: int, length: int) -> WindowObservations:
    sel = dataset.frames[start:start + length]
    slam = []
    for i in range(length - 1):
        slam.append(sel[i].slam_to_next)
    return WindowObservations(
        ego2d=np.stack([f.ego2d for f in sel]),
        ego2d_conf=np.stack([f.ego2d_conf for f in sel]),
        ego3d=np.stack([f.ego3d for f in sel]),
        ego3d_conf=np.stack([f.ego3d_conf for f in sel]),
        ext2d=np.stack([f.ext2d for f in sel]),
        ext2d_conf=np.stack([f.ext2d_conf for f in sel]),
        ext3d=np.stack([f.ext3d for f in sel]),
        ext3d_conf=np.stack([f.ext3d_conf for f in sel]),
        slam_rel=tuple(slam),
        fisheye=dataset.fisheye,
        pinhole=dataset.pinhole,
        frame_rate=dataset.frame_rate,
    )


def segment(dataset: SequenceDataset, window_len: int, stride: int = None):
    """Split into windows at offsets 0, stride, 2*stride, ...

    A trailing remainder is covered by one extra window anchored at the end
    (overlap allowed). Raises SequenceTooShort when the dataset has fewer
    frames than one window.
    """
    n = len(dataset)
    if stride is None:
        stride = window_len
    if window_len < 2 or stride < 1:
        raise ValueError("window_len must be >= 2 and stride >= 1")
    if n < window_len:
        raise SequenceTooShort(f"{n} frames < window of {window_len}")
    offsets = list(range(0, n - window_len + 1, stride))
    if offsets[-1] + window_len < n:
        offsets.append(n - window_len)
    return [WindowSlice(offset=o, observations=_window_obs(dataset, o, window_len))
            for o in offsets]


# ---------------------------------------------------------------------------
# heatmap / distance label encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeatmapGrid:
    """Label grid covering the square around the fisheye image circle.

    Grid index g maps to image pixel origin + g * cell; sigma is expressed
    in grid pixels.
    """

    width: int = 64
    height: int = 64
    sigma: float = 2.5

    def geometry(self, fisheye: FisheyeModel):
        origin = fisheye.center - fisheye.image_radius
        cell = np.array([2.0 * fisheye.image_radius / self.width,
                         2.0 * fisheye.image_radius / self.height])
        return origin, cell


def labels_to_heatmaps_distances(poses, fisheye: FisheyeModel,
                                 sigma: float = 2.5, grid=(64, 64)):
    """Encode refined poses into per-joint heatmaps and camera distances.

    poses: list of JointSet15. Returns (heatmaps (N, 15, H, W) float32,
    distances (N, 15) mm, valid (N, 15) bool). Heatmap value at grid point
    g is exp(-||g - g_joint||^2 / (2 sigma^2)) with the joint's projection
    mapped into grid coordinates; out-of-view joints give an all-zero map
    and an invalid distance flag.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    w, h = grid
    hg = HeatmapGrid(width=w, height=h, sigma=sigma)
    origin, cell = hg.geometry(fisheye)
    n = len(poses)
    heatmaps = np.zeros((n, N_JOINTS, h, w), dtype=np.float32)
    distances = np.zeros((n, N_JOINTS))
    valid = np.zeros((n, N_JOINTS), dtype=bool)
    gx = np.arange(w)
    gy = np.arange(h)
    for i, pose in enumerate(poses):
        distances[i] = np.linalg.norm(pose.joints, axis=1)
        pix, ok = project_fisheye_batch(fisheye, pose.joints)
        valid[i] = ok
        gpos = (pix - origin) / cell
        for j in range(N_JOINTS):
            if not ok[j]:
                continue
            dx2 = (gx - gpos[j, 0]) ** 2
            dy2 = (gy - gpos[j, 1]) ** 2
            heatmaps[i, j] = np.exp(-(dy2[:, None] + dx2[None, :])
                                    / (2.0 * sigma * sigma)).astype(np.float32)
    return heatmaps, distances, valid


# ---------------------------------------------------------------------------
# pseudo-label generation
# ---------------------------------------------------------------------------

@dataclass
class WindowSummary:
    offset: int
    ok: bool
    iterations: int = 0
    converged: bool = False
    initial_energy: float = float("nan")
    final_energy: float = float("nan")
    dropped_residuals: int = 0
    error: str = ""


@dataclass
class PseudoLabelSet:
    """Refined per-frame poses, cameras, heatmap/distance labels, and reports."""

    poses: list                    # JointSet15 | None per frame
    cameras: list                  # RigidTransform | None per frame
    heatmaps: np.ndarray           # (N, 15, H, W) float32
    distances: np.ndarray          # (N, 15) mm
    distance_valid: np.ndarray     # (N, 15) bool
    labeled: np.ndarray            # (N,) bool
    window_of_frame: np.ndarray    # (N,) int, -1 when unlabeled
    summaries: list
    grid: HeatmapGrid
    frame_rate: float = 25.0

    def pose_sequence(self) -> PoseSequence:
        """Labeled frames as a PoseSequence (unlabeled frames are excluded)."""
        frames = [p for p in self.poses if p is not None]
        return PoseSequence(tuple(frames), self.frame_rate)


def _assign_windows(n_frames: int, slices, ok_flags):
    """Frame -> covering window whose center is nearest (tie: earlier window)."""
    assign = np.full(n_frames, -1, dtype=int)
    best = np.full(n_frames, np.inf)
    for k, ws in enumerate(slices):
        if not ok_flags[k]:
            continue
        length = ws.observations.n_frames
        center = ws.offset + (length - 1) / 2.0
        for f in range(ws.offset, ws.offset + length):
            d = abs(f - center)
            if d < best[f] - 1e-12:
                best[f] = d
                assign[f] = k
    return assign


def generate_pseudo_labels(dataset: SequenceDataset, weights: EnergyWeights,
                           topo: BoneTopology, prior: MotionPrior = None,
                           config: OptimizerConfig = None, *,
                           window_len: int = 50, stride: int = None,
                           grid: HeatmapGrid = None, threads: int = 1) -> PseudoLabelSet:
    """Optimize every window and stitch per-frame labels.

    Frames covered by several windows take the result of the window whose
    center is nearest (earlier window on ties). Windows that fail to
    initialize are recorded; their exclusive frames stay unlabeled.
    """
    grid = grid or HeatmapGrid()
    slices = segment(dataset, window_len, stride)

    def run(ws: WindowSlice):
        try:
            report = optimize_window(ws.observations, weights, topo, prior, config)
            return report, None
        except InitializationFailure as exc:
            return None, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, slices))
    else:
        results = [run(ws) for ws in slices]

    summaries = []
    ok_flags = []
    for ws, (report, err) in zip(slices, results):
        if report is None:
            summaries.append(WindowSummary(offset=ws.offset, ok=False, error=err))
            ok_flags.append(False)
        else:
            summaries.append(WindowSummary(
                offset=ws.offset, ok=True, iterations=report.iterations_used,
                converged=report.converged, initial_energy=report.initial_energy,
                final_energy=report.final_energy,
                dropped_residuals=report.dropped_residual_count))
            ok_flags.append(True)

    n = len(dataset)
    assign = _assign_windows(n, slices, ok_flags)
    poses = [None] * n
    cameras = [None] * n
    for f in range(n):
        k = assign[f]
        if k < 0:
            continue
        report = results[k][0]
        local = f - slices[k].offset
        poses[f] = report.final_state.poses.frames[local]
        cameras[f] = RigidTransform(report.final_state.cam_rotations[local],
                                    report.final_state.cam_translations[local])

    labeled = np.array([p is not None for p in poses])
    enc_poses = [p if p is not None else JointSet15(np.zeros((N_JOINTS, 3)),
                                                    np.zeros(N_JOINTS))
                 for p in poses]
    heatmaps, distances, valid = labels_to_heatmaps_distances(
        enc_poses, dataset.fisheye, sigma=grid.sigma, grid=(grid.width, grid.height))
    heatmaps[~labeled] = 0.0
    valid[~labeled] = False

    return PseudoLabelSet(poses=poses, cameras=cameras, heatmaps=heatmaps,
                          distances=distances, distance_valid=valid,
                          labeled=labeled, window_of_frame=assign,
                          summaries=summaries, grid=grid,
                          frame_rate=dataset.frame_rate)


# ---------------------------------------------------------------------------
# label file I/O
# ---------------------------------------------------------------------------

def save_labels(out_prefix, labels: PseudoLabelSet, dataset: SequenceDataset) -> None:
    """Write labels as JSON-lines plus a flat binary heatmap sidecar.

    <prefix>.jsonl        one record per frame
    <prefix>.heatmaps.bin float32 blocks [frame][joint][row][col]
    <prefix>.heatmaps.json sidecar header describing the binary layout
    """
    prefix = Path(out_prefix)
    bin_name = prefix.name + ".heatmaps.bin"
    lines = []
    for i, f in enumerate(dataset.frames):
        pose = labels.poses[i]
        cam = labels.cameras[i]
        rec = {
            "frame": int(f.frame),
            "pose": None if pose is None else [[float(v) for v in j] for j in pose.joints],
            "cam": None if cam is None else {
                "R": [float(v) for v in cam.rotation.reshape(-1)],
                "t": [float(v) for v in cam.translation]},
            "distances": [float(v) for v in labels.distances[i]],
            "heatmap_file": bin_name,
            "flags": {
                "labeled": bool(labels.labeled[i]),
                "window": int(labels.window_of_frame[i]),
                "invalid_distance": [int(j) for j in
                                     np.nonzero(~labels.distance_valid[i])[0]],
            },
        }
        lines.append(json.dumps(rec))
    Path(str(prefix) + ".jsonl").write_text("\n".join(lines) + "\n")
    labels.heatmaps.astype("<f4").tofile(prefix.parent / bin_name)
    header = {
        "frames": int(labels.heatmaps.shape[0]),
        "joints": N_JOINTS,
        "height": labels.grid.height,
        "width": labels.grid.width,
        "dtype": "float32-le",
        "layout": "frame,joint,row,col",
        "sigma": labels.grid.sigma,
    }
    (prefix.parent / (prefix.name + ".heatmaps.json")).write_text(
        json.dumps(header, indent=2))


def load_label_poses(path) -> PoseSequence:
    """Read back the refined poses of labeled frames from a labels JSONL file."""
    frames = []
    try:
        for line in Path(path).read_text().splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("pose") is None:
                continue
            frames.append(JointSet15(np.array(rec["pose"], dtype=float)))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad labels file {path}: {exc}") from exc
    if not frames:
        raise SchemaError(f"labels file {path} contains no labeled frames")
    return PoseSequence(tuple(frames))


# ---------------------------------------------------------------------------
# bootstrapping
# ---------------------------------------------------------------------------

class BlendingEstimator:
    """Reference stand-in for the trainable pose estimator.

    predict returns its stored per-frame poses (initialized from the
    dataset's detector poses); update blends optimizer labels into the
    store: stored = alpha * labels + (1 - alpha) * stored.
    """

    def __init__(self, alpha: float = 0.5):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        self.alpha = alpha
        self._poses = None

    def predict(self, dataset: SequenceDataset):
        if self._poses is None:
            self._poses = [JointSet15(f.ego3d, f.ego3d_conf) for f in dataset.frames]
        return list(self._poses)

    def update(self, labels: PseudoLabelSet) -> None:
        blended = []
        for old, new in zip(self._poses, labels.poses):
            if new is None:
                blended.append(old)
                continue
            joints = self.alpha * new.joints + (1.0 - self.alpha) * old.joints
            blended.append(JointSet15(joints, old.confidence))
        self._poses = blended


@dataclass
class BootstrapResult:
    labels: PseudoLabelSet
    iterations: int
    pa_trace: list = field(default=None)


def bootstrap(dataset: SequenceDataset, estimator, weights: EnergyWeights,
              topo: BoneTopology, prior: MotionPrior = None,
              config: OptimizerConfig = None, max_iter: int = 1, *,
              window_len: int = 50, stride: int = None, grid: HeatmapGrid = None,
              threads: int = 1, gt_poses: PoseSequence = None) -> BootstrapResult:
    """Alternate estimator predictions and optimizer labels for max_iter rounds.

    Each round replaces the dataset's detector 3D poses with the estimator's
    predictions, regenerates pseudo labels, and feeds them back through
    estimator.update. When ground truth is supplied, the per-iteration label
    PA-MPJPE trace is returned alongside the final labels.
    """
    from .metrics import pa_mpjpe

    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    labels = None
    pa_trace = [] if gt_poses is not None else None
    for it in range(max_iter):
        try:
            preds = estimator.predict(dataset)
            current = dataset.replace_ego3d(preds)
            labels = generate_pseudo_labels(current, weights, topo, prior, config,
                                            window_len=window_len, stride=stride,
                                            grid=grid, threads=threads)
            estimator.update(labels)
        except Exception as exc:
            raise RuntimeError(f"bootstrap iteration {it} failed: {exc}") from exc
        if pa_trace is not None:
            pred = [p for p in labels.poses if p is not None]
            ref = [g for p, g in zip(labels.poses, gt_poses.frames) if p is not None]
            pa_trace.append(pa_mpjpe(PoseSequence(tuple(pred), labels.frame_rate),
                                     PoseSequence(tuple(ref), gt_poses.frame_rate)))
    return BootstrapResult(labels=labels, iterations=max_iter, pa_trace=pa_trace)
