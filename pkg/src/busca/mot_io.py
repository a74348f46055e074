"""Text-file I/O in the standard comma-separated tracking layout.

Rows are ``frame,id,bb_left,bb_top,w,h,conf,x,y,z`` with 1-based frames
and top-left box corners on disk; everything in memory uses box centers.
Ground-truth files reuse the final column for visibility.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, Detection
from .synth import Scene
from .tracker import FrameResult


class MotFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MotRow:
    frame: int
    obj_id: int
    bbox: BBox  # center form
    conf: float
    extra: float  # last column: visibility in gt files, filler otherwise


def parse_mot(path) -> List[MotRow]:
    """Read one file into rows, validating geometry as it goes."""
    rows: List[MotRow] = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise MotFormatError(f"{path}:{lineno}: expected >= 7 fields, got {len(parts)}")
            try:
                vals = [float(p) for p in parts[:10]]
            except ValueError as e:
                raise MotFormatError(f"{path}:{lineno}: non-numeric field ({e})")
            frame, obj_id, left, top, w, h, conf = vals[:7]
            extra = vals[9] if len(vals) >= 10 else -1.0
            if w <= 0 or h <= 0:
                raise MotFormatError(f"{path}:{lineno}: non-positive box extent w={w} h={h}")
            rows.append(
                MotRow(
                    frame=int(frame),
                    obj_id=int(obj_id),
                    bbox=BBox(cx=left + w / 2.0, cy=top + h / 2.0, w=w, h=h),
                    conf=conf,
                    extra=extra,
                )
            )
    return rows


def detections_by_frame(
    rows: Sequence[MotRow],
    features: Optional[Dict[Tuple[int, int], np.ndarray]] = None,
) -> Dict[int, List[Detection]]:
    """Group detection rows per frame, attaching features when given.

    Features are keyed (frame, index-within-frame). When a feature map is
    supplied it must cover every detection; missing keys are reported.
    """
    out: Dict[int, List[Detection]] = {}
    missing = []
    for row in rows:
        idx = len(out.setdefault(row.frame, []))
        app = None
        if features is not None:
            app = features.get((row.frame, idx))
            if app is None:
                missing.append((row.frame, idx))
        out[row.frame].append(
            Detection(bbox=row.bbox, confidence=min(max(row.conf, 0.0), 1.0), appearance=app)
        )
    if missing:
        raise MotFormatError(
            f"feature file covers {len(missing)} fewer detections; first missing "
            f"(frame, index) keys: {missing[:5]}"
        )
    return out


def gt_by_frame(rows: Sequence[MotRow]) -> Dict[int, List[Tuple[int, BBox, float]]]:
    """Ground-truth view: (id, box, visibility) per frame."""
    out: Dict[int, List[Tuple[int, BBox, float]]] = {}
    for row in rows:
        out.setdefault(row.frame, []).append((row.obj_id, row.bbox, row.extra))
    return out


def hyp_by_frame(rows: Sequence[MotRow]) -> Dict[int, List[Tuple[int, BBox]]]:
    """Hypothesis view: (id, box) per frame."""
    out: Dict[int, List[Tuple[int, BBox]]] = {}
    for row in rows:
        out.setdefault(row.frame, []).append((row.obj_id, row.bbox))
    return out


def _fmt(v: float) -> str:
    return f"{v:.6f}".rstrip("0").rstrip(".")


def write_results(results: Sequence[FrameResult], path) -> None:
    """Serialize tracker output; recovered boxes get the 0.99 flag value."""
    with open(path, "w") as fh:
        for res in sorted(results, key=lambda r: r.frame):
            for row in sorted(res.rows, key=lambda r: r.track_id):
                b = row.bbox
                conf = 0.99 if row.recovered else 1.0
                fh.write(
                    f"{res.frame},{row.track_id},{_fmt(b.x1)},{_fmt(b.y1)},"
                    f"{_fmt(b.w)},{_fmt(b.h)},{_fmt(conf)},-1,-1,-1\n"
                )


def write_gt(scene: Scene, path) -> None:
    """Scene ground truth in gt layout: unit conf, visibility last."""
    with open(path, "w") as fh:
        for f, frame_rows in enumerate(scene.frames):
            for g in frame_rows:
                b = g.bbox
                fh.write(
                    f"{f + 1},{g.obj_id},{_fmt(b.x1)},{_fmt(b.y1)},{_fmt(b.w)},"
                    f"{_fmt(b.h)},1,-1,-1,{_fmt(g.visibility)}\n"
                )


def write_detections(dets: Sequence[Sequence[Detection]], path) -> None:
    """Detector output rows (id column unset), frame-major order."""
    with open(path, "w") as fh:
        for f, frame_dets in enumerate(dets):
            for d in frame_dets:
                b = d.bbox
                fh.write(
                    f"{f + 1},-1,{_fmt(b.x1)},{_fmt(b.y1)},{_fmt(b.w)},{_fmt(b.h)},"
                    f"{_fmt(d.confidence)},-1,-1,-1\n"
                )
