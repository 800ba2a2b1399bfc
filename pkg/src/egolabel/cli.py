"""Command-line entry points: synth, optimize, bootstrap, evaluate.

Exit codes: 0 success, 2 schema/validation error, 3 every window failed to
optimize.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .energy import EnergyWeights, load_weights
from .errors import EgolabelError, SchemaError, SequenceTooShort
from .geometry import load_calibration, save_calibration
from .metrics import ba_mpjpe_frames, pa_mpjpe_frames
from .optimize import OptimizerConfig, dump_trace_csv, load_optimizer_config, optimize_window
from .pipeline import (BlendingEstimator, HeatmapGrid, bootstrap,
                       generate_pseudo_labels, load_dataset_jsonl,
                       load_label_poses, save_dataset_jsonl, save_labels, segment)
from .prior import load_prior
from .skeleton import (BoneTopology, PoseSequence, default_topology,
                       load_pose_sequence, save_pose_sequence)
from .synth import ScenarioConfig, gen_scenario

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_OPT_FAILED = 3


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic scenario")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--frames", type=int, default=50)
    p.add_argument("--frame-rate", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--motion", default="walk_cycle",
                   choices=["static", "walk_cycle", "random_smooth"])
    p.add_argument("--occlusion", default="none",
                   choices=["none", "lower_body_ego", "hands_ext"])
    p.add_argument("--noise-ego3d", type=float, default=30.0, help="mm")
    p.add_argument("--noise-ego2d", type=float, default=2.0, help="px")
    p.add_argument("--noise-ext2d", type=float, default=1.0, help="px")
    p.add_argument("--noise-ext3d", type=float, default=20.0, help="mm")


def _run_synth(args) -> int:
    cfg = ScenarioConfig(
        n_frames=args.frames, frame_rate=args.frame_rate, motion_kind=args.motion,
        occlusion=args.occlusion, seed=args.seed,
        noise_ego3d_mm=args.noise_ego3d, noise_ego2d_px=args.noise_ego2d,
        noise_ext2d_px=args.noise_ext2d, noise_ext3d_mm=args.noise_ext3d)
    scenario = gen_scenario(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset_jsonl(out / "dataset.jsonl", scenario.dataset)
    save_calibration(out / "calib.json", scenario.dataset.pinhole,
                     scenario.dataset.fisheye)
    save_pose_sequence(out / "gt.json", scenario.gt_poses,
                       cameras=scenario.gt_cameras)
    print(f"wrote {out / 'dataset.jsonl'} ({cfg.n_frames} frames), calib.json, gt.json")
    return EXIT_OK


def _common_opt_flags(p):
    p.add_argument("--dataset", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--weights", help="weights JSON (default: all lambdas 1.0)")
    p.add_argument("--prior", help="motion prior JSON (default: identity)")
    p.add_argument("--config", help="optimizer config JSON")
    p.add_argument("--window", type=int, default=50, help="frames per window")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--rotation-mode", choices=["axis_angle", "raw_matrix"], default=None)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--frame-rate", type=float, default=25.0)
    p.add_argument("--grid", type=int, nargs=2, default=[64, 64],
                   metavar=("W", "H"), help="heatmap label grid size")
    p.add_argument("--sigma", type=float, default=2.5, help="heatmap sigma, grid px")
    p.add_argument("--out", required=True, help="output label prefix")


def _add_optimize(sub):
    p = sub.add_parser("optimize", help="generate pseudo labels for a dataset")
    _common_opt_flags(p)
    p.add_argument("--trace", help="write the first window's energy trace CSV here")


def _add_bootstrap(sub):
    p = sub.add_parser("bootstrap",
                       help="alternate estimator and optimizer for several rounds")
    _common_opt_flags(p)
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--gt", help="ground truth pose JSON for the PA-MPJPE trace")


def _load_common(args):
    pinhole, fisheye = load_calibration(args.calib)
    dataset = load_dataset_jsonl(args.dataset, fisheye, pinhole,
                                 frame_rate=args.frame_rate)
    weights = load_weights(args.weights) if args.weights else EnergyWeights()
    prior = load_prior(args.prior) if args.prior else None
    config = load_optimizer_config(args.config) if args.config else OptimizerConfig()
    overrides = {}
    if args.rotation_mode is not None:
        overrides["rotation_mode"] = args.rotation_mode
    if args.max_iters is not None:
        overrides["max_iters"] = args.max_iters
    if overrides:
        cfg = {**config.__dict__, **overrides}
        config = OptimizerConfig(**cfg)
    grid = HeatmapGrid(width=args.grid[0], height=args.grid[1], sigma=args.sigma)
    return dataset, weights, prior, config, grid


def _run_optimize(args) -> int:
    dataset, weights, prior, config, grid = _load_common(args)
    topo = default_topology()
    labels = generate_pseudo_labels(dataset, weights, topo, prior, config,
                                    window_len=args.window, stride=args.stride,
                                    grid=grid, threads=args.threads)
    if not any(s.ok for s in labels.summaries):
        print("all windows failed to optimize", file=sys.stderr)
        return EXIT_OPT_FAILED
    save_labels(args.out, labels, dataset)
    if args.trace:
        ws = segment(dataset, args.window, args.stride)[0]
        report = optimize_window(ws.observations, weights, topo, prior, config)
        dump_trace_csv(args.trace, report)
    n_labeled = int(labels.labeled.sum())
    print(f"labeled {n_labeled}/{len(dataset)} frames over "
          f"{len(labels.summaries)} windows -> {args.out}.jsonl")
    return EXIT_OK


def _run_bootstrap(args) -> int:
    dataset, weights, prior, config, grid = _load_common(args)
    topo = default_topology()
    gt = None
    if args.gt:
        gt, _ = load_pose_sequence(args.gt)
    estimator = BlendingEstimator(alpha=args.alpha)
    result = bootstrap(dataset, estimator, weights, topo, prior, config,
                       max_iter=args.iters, window_len=args.window,
                       stride=args.stride, grid=grid, threads=args.threads,
                       gt_poses=gt)
    if not any(s.ok for s in result.labels.summaries):
        print("all windows failed to optimize", file=sys.stderr)
        return EXIT_OPT_FAILED
    save_labels(args.out, result.labels, dataset)
    if result.pa_trace is not None:
        trace = ", ".join(f"{v:.3f}" for v in result.pa_trace)
        print(f"PA-MPJPE per iteration: {trace}")
    print(f"bootstrap finished after {result.iterations} iterations -> {args.out}.jsonl")
    return EXIT_OK


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="PA-/BA-MPJPE of predictions vs ground truth")
    p.add_argument("--pred", required=True,
                   help="pose JSON or labels JSONL with the predictions")
    p.add_argument("--gt", required=True, help="ground truth pose JSON")
    p.add_argument("--topo", help="bone topology JSON (default: built-in skeleton)")
    p.add_argument("--per-action", action="store_true",
                   help="break results down by the gt file's frame tags")
    p.add_argument("--json", dest="json_out", action="store_true",
                   help="print machine-readable JSON only")


def _load_topology(path) -> BoneTopology:
    try:
        data = json.loads(Path(path).read_text())
        return BoneTopology(tuple(tuple(e) for e in data["edges"]),
                            np.array(data["reference_lengths"], dtype=float))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"bad topology file {path}: {exc}") from exc


def _metric_block(pred: PoseSequence, gt: PoseSequence, topo: BoneTopology) -> dict:
    pa, used, skipped = pa_mpjpe_frames(pred, gt)
    ba, _, ba_skipped = ba_mpjpe_frames(pred, gt, topo)
    return {
        "pa_mpjpe": float(pa.mean()) if used else None,
        "ba_mpjpe": float(ba.mean()) if len(ba) else None,
        "pa_mpjpe_median": float(np.median(pa)) if used else None,
        "ba_mpjpe_median": float(np.median(ba)) if len(ba) else None,
        "frames_used": used,
        "frames_skipped": skipped + ba_skipped,
    }


def _run_evaluate(args) -> int:
    gt, tags = load_pose_sequence(args.gt)
    if args.pred.endswith(".jsonl"):
        pred = load_label_poses(args.pred)
    else:
        pred, _ = load_pose_sequence(args.pred)
    if len(pred) != len(gt):
        raise SchemaError(f"pred has {len(pred)} frames but gt has {len(gt)}")
    topo = _load_topology(args.topo) if args.topo else default_topology()

    report = _metric_block(pred, gt, topo)
    if args.per_action and tags:
        per_action = {}
        for tag in sorted(set(tags)):
            idx = [i for i, t in enumerate(tags) if t == tag]
            sub_pred = PoseSequence(tuple(pred.frames[i] for i in idx), pred.frame_rate)
            sub_gt = PoseSequence(tuple(gt.frames[i] for i in idx), gt.frame_rate)
            per_action[tag] = _metric_block(sub_pred, sub_gt, topo)
        report["per_action"] = per_action

    print(json.dumps(report, indent=None if args.json_out else 2))
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="egolabel",
        description="Multi-view spatio-temporal optimization for egocentric "
                    "pose pseudo labels")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_optimize(sub)
    _add_bootstrap(sub)
    _add_evaluate(sub)
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            return _run_synth(args)
        if args.command == "optimize":
            return _run_optimize(args)
        if args.command == "bootstrap":
            return _run_bootstrap(args)
        if args.command == "evaluate":
            return _run_evaluate(args)
    except (SchemaError, SequenceTooShort, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except EgolabelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OPT_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
