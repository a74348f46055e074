"""Tracking evaluation: CLEAR counts, identity-F1, and track-length views.

Ground truth and hypotheses arrive as frame-indexed maps of (id, box)
entries; ground-truth entries may carry a trailing visibility value,
which the rescue histogram requires.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import hungarian
from .core import BBox
from .geometry import iou

Frames = Dict[int, List[tuple]]  # frame -> [(id, BBox) or (id, BBox, visibility)]


class MetricsInputError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    gt_count: int
    fp: int
    fn: int
    idsw: int
    mota: float
    idf1: Optional[float] = None
    track_lengths: Tuple[int, ...] = ()
    rescued_by_visibility: Optional[Tuple[int, ...]] = None


def _entries(frames: Frames, frame: int, what: str) -> List[Tuple[int, BBox]]:
    out = []
    seen = set()
    for entry in frames.get(frame, []):
        oid, box = entry[0], entry[1]
        if oid in seen:
            raise MetricsInputError(f"{what}: duplicate id {oid} in frame {frame}")
        seen.add(oid)
        out.append((oid, box))
    return out


def _match_frame(
    gts: List[Tuple[int, BBox]],
    hyps: List[Tuple[int, BBox]],
    thresh: float,
    prefer: Optional[Dict[int, int]] = None,
) -> List[Tuple[int, int]]:
    """Match gt to hyp ids in one frame; IoU must reach the threshold.

    ``prefer`` maps gt id -> previously matched hyp id; those pairs are
    kept first whenever they still clear the gate, mirroring the CLEAR
    protocol's sticky correspondences.
    """
    gt_left = list(range(len(gts)))
    hyp_left = list(range(len(hyps)))
    matches: List[Tuple[int, int]] = []
    if prefer:
        hyp_by_id = {hid: j for j, (hid, _) in enumerate(hyps)}
        for i, (gid, gbox) in enumerate(gts):
            j = hyp_by_id.get(prefer.get(gid))
            if j is not None and j in hyp_left and iou(gbox, hyps[j][1]) >= thresh:
                matches.append((i, j))
                gt_left.remove(i)
                hyp_left.remove(j)
    if gt_left and hyp_left:
        ious = np.array([[iou(gts[i][1], hyps[j][1]) for j in hyp_left] for i in gt_left])
        pairs = hungarian(1.0 - ious, allowed=ious >= thresh)
        matches += [(gt_left[r], hyp_left[c]) for r, c in pairs]
    return matches


def clear_mot(gt: Frames, hyp: Frames, iou_threshold: float = 0.5) -> MetricsReport:
    """Frame-by-frame CLEAR accounting: FP, FN, identity switches, MOTA."""
    frames = sorted(set(gt) | set(hyp))
    last_match: Dict[int, int] = {}
    fp = fn = idsw = gt_count = 0
    for f in frames:
        gts = _entries(gt, f, "gt")
        hyps = _entries(hyp, f, "hyp")
        gt_count += len(gts)
        matches = _match_frame(gts, hyps, iou_threshold, prefer=last_match)
        for i, j in matches:
            gid, hid = gts[i][0], hyps[j][0]
            if gid in last_match and last_match[gid] != hid:
                idsw += 1
            last_match[gid] = hid
        fp += len(hyps) - len(matches)
        fn += len(gts) - len(matches)
    if gt_count > 0:
        mota = 1.0 - (fn + fp + idsw) / gt_count
    else:
        mota = 1.0 if fp == 0 else float("-inf")
    return MetricsReport(gt_count=gt_count, fp=fp, fn=fn, idsw=idsw, mota=mota)


def idf1(gt: Frames, hyp: Frames, iou_threshold: float = 0.5) -> float:
    """Identity-F1: one global gt-id to hyp-id matching over the sequence."""
    frames = sorted(set(gt) | set(hyp))
    overlap: Dict[Tuple[int, int], int] = {}
    total_gt = total_hyp = 0
    gt_ids: List[int] = []
    hyp_ids: List[int] = []
    for f in frames:
        gts = _entries(gt, f, "gt")
        hyps = _entries(hyp, f, "hyp")
        total_gt += len(gts)
        total_hyp += len(hyps)
        for gid, gbox in gts:
            if gid not in gt_ids:
                gt_ids.append(gid)
            for hid, hbox in hyps:
                if iou(gbox, hbox) >= iou_threshold:
                    overlap[(gid, hid)] = overlap.get((gid, hid), 0) + 1
        for hid, _ in hyps:
            if hid not in hyp_ids:
                hyp_ids.append(hid)
    if total_gt == 0 and total_hyp == 0:
        return 1.0
    if not overlap:
        return 0.0
    # Ungated full matrix: pairing ids that never overlap costs nothing,
    # exactly like leaving them unmatched, so the solver is free to
    # maximize the total overlap rather than the pair count.
    cost = np.zeros((len(gt_ids), len(hyp_ids)))
    for (gid, hid), n in overlap.items():
        cost[gt_ids.index(gid), hyp_ids.index(hid)] = -float(n)
    pairs = hungarian(cost)
    idtp = -sum(cost[r, c] for r, c in pairs)
    return float(2.0 * idtp / (total_gt + total_hyp))


@dataclass(frozen=True)
class TrackLengthStats:
    lengths: Tuple[int, ...]
    median: float
    mean: float


def track_length_stats(hyp: Frames) -> TrackLengthStats:
    """Frames-per-identity summary; empty input yields empty stats."""
    counts: Dict[int, int] = {}
    for f in hyp:
        for entry in hyp[f]:
            counts[entry[0]] = counts.get(entry[0], 0) + 1
    lengths = tuple(sorted(counts.values()))
    if not lengths:
        return TrackLengthStats(lengths=(), median=float("nan"), mean=float("nan"))
    return TrackLengthStats(
        lengths=lengths,
        median=float(np.median(lengths)),
        mean=float(np.mean(lengths)),
    )


def rescued_by_visibility(
    gt: Frames,
    baseline_hyp: Frames,
    busca_hyp: Frames,
    bins: int = 4,
    iou_threshold: float = 0.5,
) -> Tuple[int, ...]:
    """How many gt boxes the recovery found that the baseline missed,
    bucketed by the annotation's visibility (equal-width bins over [0, 1],
    top bin closed)."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    counts = [0] * bins
    frames = sorted(set(gt) | set(baseline_hyp) | set(busca_hyp))
    for f in frames:
        raw = gt.get(f, [])
        for entry in raw:
            if len(entry) < 3 or entry[2] is None:
                raise MetricsInputError(
                    f"gt frame {f}: visibility missing for id {entry[0]}"
                )
        gts = _entries(gt, f, "gt")
        vis = {entry[0]: float(entry[2]) for entry in raw}
        base = set()
        for i, _ in _match_frame(gts, _entries(baseline_hyp, f, "baseline"), iou_threshold):
            base.add(gts[i][0])
        for i, _ in _match_frame(gts, _entries(busca_hyp, f, "busca"), iou_threshold):
            gid = gts[i][0]
            if gid in base:
                continue
            b = min(int(vis[gid] * bins), bins - 1)
            counts[b] += 1
    return tuple(counts)


def evaluate(
    gt: Frames,
    hyp: Frames,
    iou_threshold: float = 0.5,
    baseline_hyp: Optional[Frames] = None,
    bins: int = 4,
) -> MetricsReport:
    """Full report: CLEAR counts, IDF1, lengths, optional rescue histogram."""
    base = clear_mot(gt, hyp, iou_threshold)
    rescued = None
    if baseline_hyp is not None:
        rescued = rescued_by_visibility(gt, baseline_hyp, hyp, bins, iou_threshold)
    return MetricsReport(
        gt_count=base.gt_count,
        fp=base.fp,
        fn=base.fn,
        idsw=base.idsw,
        mota=base.mota,
        idf1=idf1(gt, hyp, iou_threshold),
        track_lengths=track_length_stats(hyp).lengths,
        rescued_by_visibility=rescued,
    )
