"""PA-MPJPE and BA-MPJPE evaluation metrics."""

from __future__ import annotations

import numpy as np

from .align import procrustes
from .errors import DegenerateBone, DegenerateConfiguration, InsufficientPoints
from .skeleton import BoneTopology, PoseSequence, rescale_to_skeleton


def pa_mpjpe_frames(pred: PoseSequence, gt: PoseSequence,
                    with_scale: bool = True):
    """Per-frame Procrustes-aligned mean joint error.

    Each frame of pred is aligned onto the matching gt frame (similarity by
    default; rigid when with_scale is False) before averaging the per-joint
    Euclidean errors. Joints need positive confidence in both sequences to
    participate. Returns (per-frame errors in mm, frames_used, frames_skipped);
    degenerate frames are skipped and counted.
    """
    if len(pred) != len(gt):
        raise ValueError("pred and gt must have the same number of frames")
    errors = []
    skipped = 0
    for fp, fg in zip(pred.frames, gt.frames):
        w = np.where((fp.confidence > 0) & (fg.confidence > 0), 1.0, 0.0)
        try:
            res = procrustes(fp.joints, fg.joints, weights=w, with_scale=with_scale)
        except (DegenerateConfiguration, InsufficientPoints):
            skipped += 1
            continue
        aligned = res.scale * fp.joints @ res.transform.rotation.T + res.transform.translation
        per_joint = np.linalg.norm(aligned - fg.joints, axis=1)
        errors.append(float(per_joint[w > 0].mean()))
    return np.array(errors), len(errors), skipped


def pa_mpjpe(pred: PoseSequence, gt: PoseSequence, with_scale: bool = True) -> float:
    """Mean over frames of the per-frame Procrustes-aligned joint error (mm)."""
    errors, used, _ = pa_mpjpe_frames(pred, gt, with_scale=with_scale)
    if used == 0:
        raise DegenerateConfiguration("no frame could be aligned")
    return float(errors.mean())


def ba_mpjpe_frames(pred: PoseSequence, gt: PoseSequence, topo: BoneTopology,
                    with_scale: bool = True):
    """PA-MPJPE after renormalizing both skeletons to the reference bone lengths.

    Frames where either pose has a degenerate bone are skipped and counted.
    Returns (per-frame errors, frames_used, frames_skipped).
    """
    if len(pred) != len(gt):
        raise ValueError("pred and gt must have the same number of frames")
    errors = []
    skipped = 0
    for fp, fg in zip(pred.frames, gt.frames):
        try:
            rp = rescale_to_skeleton(fp, topo)
            rg = rescale_to_skeleton(fg, topo)
        except DegenerateBone:
            skipped += 1
            continue
        w = np.where((fp.confidence > 0) & (fg.confidence > 0), 1.0, 0.0)
        try:
            res = procrustes(rp.joints, rg.joints, weights=w, with_scale=with_scale)
        except (DegenerateConfiguration, InsufficientPoints):
            skipped += 1
            continue
        aligned = res.scale * rp.joints @ res.transform.rotation.T + res.transform.translation
        per_joint = np.linalg.norm(aligned - rg.joints, axis=1)
        errors.append(float(per_joint[w > 0].mean()))
    return np.array(errors), len(errors), skipped


def ba_mpjpe(pred: PoseSequence, gt: PoseSequence, topo: BoneTopology,
             with_scale: bool = True) -> float:
    errors, used, _ = ba_mpjpe_frames(pred, gt, topo, with_scale=with_scale)
    if used == 0:
        raise DegenerateConfiguration("no frame could be aligned")
    return float(errors.mean())
