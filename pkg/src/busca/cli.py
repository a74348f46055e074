"""Command-line surface.

Five subcommands cover the full loop:

    busca simulate --config demo.cfg --out data/
    busca train    --config demo.cfg --data data/ --out model.busm
    busca track    --config demo.cfg --dets data/det.txt --features data/features.busf \\
                   --model model.busm --recovery busca --out results.txt
    busca eval     --gt data/gt.txt --results results.txt --out report.csv
    busca ablate   --config demo.cfg --dets data/det.txt --features data/features.busf \\
                   --gt data/gt.txt --model model.busm --out table.csv

Every command is deterministic for a fixed seed; reruns produce byte
identical files.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import ConfigError, RunConfig, default_config_text, load_config
from .core import Detection
from .features import FeatureError, load_features, write_features
from .metrics import MetricsReport, evaluate
from .model import assemble, init_model
from .model_io import ModelFileError, load_model, save_model
from .mot_io import (
    MotFormatError,
    detections_by_frame,
    gt_by_frame,
    hyp_by_frame,
    parse_mot,
    write_detections,
    write_gt,
    write_results,
)
from .proposals import ProposalError
from .ste import Anchor
from .synth import GtBox, Scene, build_training_sample, generate_scene, inject_detector
from .tracker import RECOVERY_STRATEGIES, Tracker, run_sequence
from .train import TrainingDiverged, train

ABLATION_TOGGLES = ("hlc", "mss", "ste", "ctx")


def _fmt(v) -> str:
    if isinstance(v, float):
        s = f"{v:.6f}".rstrip("0").rstrip(".")
        return s if s not in ("", "-") else "0"
    return str(v)


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


# ----------------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    os.makedirs(args.out, exist_ok=True)
    scene = generate_scene(cfg.scene)
    dets = inject_detector(scene, cfg.scene)

    write_gt(scene, os.path.join(args.out, "gt.txt"))
    write_detections(dets, os.path.join(args.out, "det.txt"))

    det_feats = {
        (f + 1, i): d.appearance
        for f, frame in enumerate(dets)
        for i, d in enumerate(frame)
    }
    write_features(
        os.path.join(args.out, "features.busf"), det_feats, cfg.scene.feature_dim
    )
    # Ground-truth appearance, keyed by row position within the frame, so
    # training can rebuild the scene from the text file alone.
    gt_feats = {
        (f + 1, i): scene.appearance[(f, g.obj_id)]
        for f, frame in enumerate(scene.frames)
        for i, g in enumerate(frame)
    }
    write_features(
        os.path.join(args.out, "gt_features.busf"), gt_feats, cfg.scene.feature_dim
    )
    n_det = sum(len(frame) for frame in dets)
    _say(
        f"simulated {cfg.scene.n_objects} objects over {scene.n_frames} frames "
        f"({n_det} detections) into {args.out}"
    )
    return 0


# ----------------------------------------------------------------------------
# train
# ----------------------------------------------------------------------------


def _scene_from_files(data_dir: str, cfg: RunConfig) -> Scene:
    """Rebuild a scene object from gt.txt plus its feature sidecar."""
    gt_path = os.path.join(data_dir, "gt.txt")
    feat_path = os.path.join(data_dir, "gt_features.busf")
    frames_map = gt_by_frame(parse_mot(gt_path))
    feats = load_features(feat_path, cfg.scene.feature_dim)
    if not frames_map:
        raise MotFormatError(f"{gt_path}: no ground-truth rows")
    n_frames = max(frames_map)
    frames: List[List[GtBox]] = [[] for _ in range(n_frames)]
    appearance: Dict[Tuple[int, int], np.ndarray] = {}
    for frame, rows in frames_map.items():
        for i, (obj_id, bbox, vis) in enumerate(rows):
            if vis is None:
                raise MotFormatError(f"{gt_path}: frame {frame} id {obj_id}: no visibility")
            frames[frame - 1].append(GtBox(obj_id=obj_id, bbox=bbox, visibility=vis))
            vec = feats.get((frame, i))
            if vec is None:
                raise FeatureError(
                    f"{feat_path}: no vector for frame {frame} row {i}"
                )
            appearance[(frame - 1, obj_id)] = vec
    return Scene(config=cfg.scene, frames=frames, appearance=appearance)


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    if cfg.model.feature_dim != cfg.scene.feature_dim:
        raise ConfigError(
            f"model.feature_dim={cfg.model.feature_dim} must match "
            f"scene.feature_dim={cfg.scene.feature_dim} when training on simulated data"
        )
    scene = _scene_from_files(args.data, cfg)
    model = init_model(cfg.model, seed=cfg.seed)
    ste_cfg = cfg.ste_config()

    # Builder stream is the third spawn of the run seed; scene generation
    # and the detector own the first two.
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    n = cfg.data.n_samples
    seqs, targets = [], []
    for k in range(n):
        sample = build_training_sample(scene, rng, cfg.builder)
        anchor = Anchor(sample.window[-1].bbox, sample.window[-1].t)
        seqs.append(assemble(sample.window, sample.proposals, anchor, model, ste_cfg))
        targets.append(sample.target_index)
        if (k + 1) % max(n // 10, 1) == 0:
            _say(f"built {k + 1}/{n} training samples")

    n_hold = max(1, int(round(n * cfg.data.holdout_frac)))
    if n_hold >= n:
        raise ConfigError(f"holdout consumes all {n} samples")
    holdout = (seqs[n - n_hold :], targets[n - n_hold :])
    model, history = train(seqs[: n - n_hold], targets[: n - n_hold], model, cfg.train, holdout)
    save_model(model, args.out)

    curve_path = os.path.splitext(args.out)[0] + "_loss.csv"
    cols = ["epoch", "loss", "lr", "holdout_loss", "holdout_accuracy"]
    with open(curve_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in history:
            fh.write(",".join(_fmt(row[c]) for c in cols) + "\n")
    last = history[-1]
    _say(
        f"trained {cfg.train.epochs} epochs; final loss {last['loss']:.4f}, "
        f"holdout accuracy {last['holdout_accuracy']:.3f}; model -> {args.out}"
    )
    return 0


# ----------------------------------------------------------------------------
# track
# ----------------------------------------------------------------------------


def _load_detections(dets_path, features_path, cfg, need_features) -> Dict[int, List[Detection]]:
    feats = None
    if features_path is not None:
        feats = load_features(features_path, cfg.scene.feature_dim)
    elif need_features:
        raise ConfigError(
            "this recovery mode builds appearance tokens; pass --features"
        )
    return detections_by_frame(parse_mot(dets_path), feats)


def cmd_track(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    recovery = args.recovery or cfg.tracker.recovery
    tracker_cfg = dataclasses.replace(cfg.tracker, recovery=recovery)

    model = None
    if recovery == "busca":
        if args.model is None:
            raise ConfigError("recovery=busca needs --model")
        model = load_model(args.model, cfg.model)
    dbf = _load_detections(
        args.dets, args.features, cfg, need_features=recovery in ("iou", "mixed", "busca")
    )
    tracker = Tracker(tracker_cfg, model=model, ste_cfg=cfg.ste_config())
    results = run_sequence(tracker, dbf)
    write_results(results, args.out)
    n_rows = sum(len(r.rows) for r in results)
    n_rec = sum(sum(row.recovered for row in r.rows) for r in results)
    _say(
        f"tracked {len(results)} frames with recovery={recovery}: "
        f"{n_rows} boxes, {n_rec} recovered -> {args.out}"
    )
    return 0


# ----------------------------------------------------------------------------
# eval
# ----------------------------------------------------------------------------


def _report_rows(report: MetricsReport) -> List[Tuple[str, object]]:
    lengths = report.track_lengths
    rows: List[Tuple[str, object]] = [
        ("gt_count", report.gt_count),
        ("fp", report.fp),
        ("fn", report.fn),
        ("idsw", report.idsw),
        ("mota", report.mota),
        ("idf1", report.idf1),
        ("n_tracks", len(lengths)),
        ("track_length_median", float(np.median(lengths)) if lengths else float("nan")),
        ("track_length_mean", float(np.mean(lengths)) if lengths else float("nan")),
    ]
    if report.rescued_by_visibility is not None:
        k = len(report.rescued_by_visibility)
        for b, count in enumerate(report.rescued_by_visibility):
            rows.append((f"rescued_vis_{b / k:.2f}_{(b + 1) / k:.2f}", count))
    return rows


def cmd_eval(args) -> int:
    gt = gt_by_frame(parse_mot(args.gt))
    hyp = hyp_by_frame(parse_mot(args.results))
    baseline = hyp_by_frame(parse_mot(args.baseline)) if args.baseline else None
    report = evaluate(gt, hyp, baseline_hyp=baseline)
    rows = _report_rows(report)
    with open(args.out, "w") as fh:
        fh.write("key,value\n")
        for key, value in rows:
            fh.write(f"{key},{_fmt(value)}\n")
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        print(f"{key:<{width}}  {_fmt(value)}")
    return 0


# ----------------------------------------------------------------------------
# ablate
# ----------------------------------------------------------------------------


def _ablation_ladder(toggles: List[str]) -> List[Tuple[str, str, Dict[str, bool]]]:
    """Row plan: plain baseline, full model, then one toggle off at a time,
    and both learned tokens off together when both are in play."""
    ladder = [("none", "none", {}), ("busca", "busca", {})]
    for t in ABLATION_TOGGLES:
        if t in toggles:
            ladder.append((f"busca_no_{t}", "busca", {t: False}))
    if "hlc" in toggles and "mss" in toggles:
        ladder.append(("busca_no_hlc_mss", "busca", {"hlc": False, "mss": False}))
    return ladder


def cmd_ablate(args) -> int:
    cfg = load_config(args.config, seed_override=args.seed)
    toggles = [t.strip() for t in args.toggles.split(",") if t.strip()]
    bad = [t for t in toggles if t not in ABLATION_TOGGLES]
    if bad:
        raise ConfigError(f"unknown toggles {bad}; valid: {', '.join(ABLATION_TOGGLES)}")

    model = load_model(args.model, cfg.model)
    dbf = _load_detections(args.dets, args.features, cfg, need_features=True)
    gt = gt_by_frame(parse_mot(args.gt))

    header = ["variant", "recovery", "hlc", "mss", "ste", "ctx",
              "fp", "fn", "idsw", "mota", "idf1", "track_length_median"]
    table: List[List[str]] = []
    for name, recovery, flips in _ablation_ladder(toggles):
        tcfg = dataclasses.replace(cfg.tracker, recovery=recovery, **flips)
        tracker = Tracker(tcfg, model=model if recovery == "busca" else None,
                          ste_cfg=cfg.ste_config())
        results = run_sequence(tracker, dbf)
        report = evaluate(gt, {r.frame: [(x.track_id, x.bbox) for x in r.rows] for r in results})
        lengths = report.track_lengths
        med = float(np.median(lengths)) if lengths else float("nan")
        table.append([
            name, recovery,
            *(str(int(getattr(tcfg, t))) for t in ABLATION_TOGGLES),
            str(report.fp), str(report.fn), str(report.idsw),
            _fmt(report.mota), _fmt(report.idf1), _fmt(med),
        ])
        _say(f"{name}: fn={report.fn} fp={report.fp} mota={report.mota:.4f}")

    with open(args.out, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(row) + "\n")
    widths = [max(len(header[i]), max(len(r[i]) for r in table)) for i in range(len(header))]
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for row in table:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return 0


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="busca",
        description="Online multi-object tracking with transformer-based track recovery.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True)

    def _with_config(sp):
        sp.add_argument("--config", required=True, help="key=value run configuration")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config seed (beats BUSCA_SEED)")

    sp = sub.add_parser("simulate", help="generate a synthetic scene and detector output")
    _with_config(sp)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train the decision model on simulated data")
    _with_config(sp)
    sp.add_argument("--data", required=True, help="directory produced by simulate")
    sp.add_argument("--out", required=True, help="model file to write (.busm)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("track", help="run the tracker over a detection file")
    _with_config(sp)
    sp.add_argument("--dets", required=True, help="detection text file")
    sp.add_argument("--features", default=None, help="appearance sidecar (.busf)")
    sp.add_argument("--model", default=None, help="trained model (.busm)")
    sp.add_argument("--recovery", choices=RECOVERY_STRATEGIES, default=None,
                    help="recovery strategy (default: from config)")
    sp.add_argument("--out", required=True, help="results text file")
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("eval", help="score a results file against ground truth")
    sp.add_argument("--gt", required=True, help="ground-truth text file")
    sp.add_argument("--results", required=True, help="tracker results text file")
    sp.add_argument("--baseline", default=None,
                    help="baseline results; adds a rescued-by-visibility histogram")
    sp.add_argument("--out", required=True, help="report CSV to write")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="toggle model components and tabulate the effect")
    _with_config(sp)
    sp.add_argument("--dets", required=True, help="detection text file")
    sp.add_argument("--features", required=True, help="appearance sidecar (.busf)")
    sp.add_argument("--gt", required=True, help="ground-truth text file")
    sp.add_argument("--model", required=True, help="trained model (.busm)")
    sp.add_argument("--toggles", default=",".join(ABLATION_TOGGLES),
                    help="comma list from {hlc,mss,ste,ctx}")
    sp.add_argument("--out", required=True, help="table CSV to write")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("config", help="print every config key with its default")
    sp.set_defaults(func=cmd_config)
    return p


def cmd_config(args) -> int:
    print(default_config_text(), end="")
    return 0


def _version() -> str:
    from . import __version__

    return __version__


_KNOWN_ERRORS = (
    ConfigError,
    MotFormatError,
    FeatureError,
    ModelFileError,
    ProposalError,
    TrainingDiverged,
    OSError,
)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _KNOWN_ERRORS as e:
        _say(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
