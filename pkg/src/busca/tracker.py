"""Online tracking-by-detection loop with pluggable miss recovery.

Each step runs predict, two-round association, recovery of unmatched
tracks, births, and aging. Recovery is where the strategies differ:

* ``none``   pause every unmatched track (plain base tracker);
* ``ld``     re-associate against leftover detections down to a tiny
             confidence floor;
* ``iou``    accept the motion candidate iff it beats the contextual
             proposals on overlap with the track's last box;
* ``mixed``  overlap-gate the proposals, then decide by appearance;
* ``busca``  ask the decision transformer.

Emitted frame results are immutable; re-running a shorter prefix of the
same input reproduces byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .assignment import hungarian
from .core import (
    AssignmentSet,
    BBox,
    Detection,
    Observation,
    Source,
    Track,
    TrackState,
    track_window,
)
from .features import cosine_similarity
from .geometry import iou
from .kalman import kalman_initiate, kalman_predict, kalman_update, state_bbox
from .model import DecisionModel, Outcome, assemble, forward
from .proposals import ProposalKind, build_proposals
from .ste import Anchor, SteConfig

RECOVERY_STRATEGIES = ("none", "ld", "iou", "mixed", "busca")


@dataclass(frozen=True)
class TrackerConfig:
    det_thresh_high: float = 0.6
    det_thresh_low: float = 0.1
    iou_match_thresh: float = 0.3
    new_track_thresh: float = 0.7
    max_age: int = 30
    recovery: str = "none"
    ld_eps: float = 0.01
    mixed_iou_gate: float = 0.7
    z: int = 11  # observations needed before the model is consulted
    q: int = 4  # contextual proposals kept
    zeta: float = 1.0
    frame_width: float = 1920.0
    frame_height: float = 1080.0
    # Ablation toggles: hallucination token, miss token, spatio-temporal
    # encoding, contextual proposals.
    hlc: bool = True
    mss: bool = True
    ste: bool = True
    ctx: bool = True
    # Interpretation flag: feed model-accepted candidates back into the
    # Kalman filter. Off by default; the candidate came out of the filter,
    # so folding it back in would only shrink covariance without evidence.
    busca_updates_kalman: bool = False

    def __post_init__(self):
        for name in ("det_thresh_high", "det_thresh_low", "iou_match_thresh", "new_track_thresh"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} outside [0, 1]: {v}")
        if self.z < 1:
            raise ValueError(f"z must be >= 1, got {self.z}")
        if self.recovery not in RECOVERY_STRATEGIES:
            raise ValueError(f"unknown recovery strategy '{self.recovery}'")


@dataclass(frozen=True)
class ResultRow:
    track_id: int
    bbox: BBox
    state: TrackState
    recovered: bool  # observation produced by a recovery step


@dataclass(frozen=True)
class FrameResult:
    frame: int
    rows: Tuple[ResultRow, ...]

    def __post_init__(self):
        ids = [r.track_id for r in self.rows]
        if len(ids) != len(set(ids)):
            raise ValueError(f"frame {self.frame}: duplicate track ids in result")


def associate(
    detections: Sequence[Detection],
    tracks: Sequence[Track],
    cfg: TrackerConfig,
    frame: int,
) -> AssignmentSet:
    """Two-round IoU association; matched tracks are updated in place.

    Round one pairs confident detections with all live tracks, round two
    offers the low-confidence leftovers to the still-unmatched tracks.
    Pairs must meet the IoU threshold (inclusive).
    """
    high = [i for i, d in enumerate(detections) if d.confidence >= cfg.det_thresh_high]
    low = [
        i
        for i, d in enumerate(detections)
        if cfg.det_thresh_low <= d.confidence < cfg.det_thresh_high
    ]
    pred_boxes = [state_bbox((t.mean, t.covariance)) for t in tracks]

    def _round(track_idx: List[int], det_idx: List[int]) -> List[Tuple[int, int]]:
        if not track_idx or not det_idx:
            return []
        ious = np.array(
            [[iou(pred_boxes[ti], detections[di].bbox) for di in det_idx] for ti in track_idx]
        )
        pairs = hungarian(1.0 - ious, allowed=ious >= cfg.iou_match_thresh)
        return [(track_idx[r], det_idx[c]) for r, c in pairs]

    all_tracks = list(range(len(tracks)))
    matches = _round(all_tracks, high)
    matched_t = {t for t, _ in matches}
    remaining = [t for t in all_tracks if t not in matched_t]
    matches += _round(remaining, low)

    for ti, di in matches:
        t, d = tracks[ti], detections[di]
        new_state = kalman_update((t.mean, t.covariance), d.bbox)
        t.mean, t.covariance = new_state
        t.append(Observation(d.bbox, frame, appearance=d.appearance, source=Source.DETECTOR))
        t.mark_active()
        t.recovered = False

    matched_t = {t for t, _ in matches}
    matched_d = {d for _, d in matches}
    return AssignmentSet(
        pairs=tuple(sorted(matches)),
        unmatched_tracks=tuple(i for i in all_tracks if i not in matched_t),
        unmatched_detections=tuple(i for i in range(len(detections)) if i not in matched_d),
    )


class Tracker:
    """Owns all track state; drive it with :meth:`step` once per frame."""

    def __init__(
        self,
        cfg: TrackerConfig,
        model: Optional[DecisionModel] = None,
        ste_cfg: Optional[SteConfig] = None,
    ):
        self.cfg = cfg
        self.model = model
        self.ste_cfg = ste_cfg
        if cfg.recovery == "busca":
            if model is None:
                raise ValueError("busca recovery needs a decision model")
            self.ste_cfg = ste_cfg or SteConfig(d_model=model.config.d_model)
        self.tracks: List[Track] = []
        self.next_id = 1
        self.last_frame: Optional[int] = None

    # -- lifecycle helpers ---------------------------------------------------

    def _live(self) -> List[Track]:
        return [t for t in self.tracks if t.state != TrackState.TERMINATED]

    def _birth(self, det: Detection, frame: int) -> Track:
        t = Track(track_id=self.next_id, history_cap=4 * self.cfg.z)
        self.next_id += 1
        t.mean, t.covariance = kalman_initiate(det.bbox)
        t.append(Observation(det.bbox, frame, appearance=det.appearance, source=Source.DETECTOR))
        self.tracks.append(t)
        return t

    # -- recovery strategies ---------------------------------------------------

    def _candidate_proposals(self, track: Track, frame: int, pool, include_learned: bool):
        return build_proposals(
            track,
            frame,
            pool,
            frame_size=(self.cfg.frame_width, self.cfg.frame_height),
            q=self.cfg.q,
            zeta=self.cfg.zeta,
            include_ctx=self.cfg.ctx,
            include_miss=include_learned and self.cfg.mss,
            include_halluc=include_learned and self.cfg.hlc,
        )

    def _accept_candidate(self, track: Track, frame: int, bbox: BBox) -> None:
        track.append(
            Observation(bbox, frame, appearance=track.last.appearance, source=Source.MOTION_MODEL)
        )
        track.mark_active()
        track.recovered = True
        if self.cfg.busca_updates_kalman:
            track.mean, track.covariance = kalman_update((track.mean, track.covariance), bbox)

    def _recover_ld(self, unmatched: List[Track], leftovers: List[Tuple[int, Detection]], frame: int) -> List[int]:
        """Leftover-detection pass; returns consumed detection indices."""
        pool = [(i, d) for i, d in leftovers if d.confidence >= self.cfg.ld_eps]
        if not unmatched or not pool:
            for t in unmatched:
                t.mark_paused()
            return []
        pred = [state_bbox((t.mean, t.covariance)) for t in unmatched]
        ious = np.array([[iou(pb, d.bbox) for _, d in pool] for pb in pred])
        pairs = hungarian(1.0 - ious, allowed=ious >= self.cfg.iou_match_thresh)
        consumed = []
        matched_rows = set()
        for r, c in pairs:
            t = unmatched[r]
            det_idx, det = pool[c]
            t.mean, t.covariance = kalman_update((t.mean, t.covariance), det.bbox)
            t.append(Observation(det.bbox, frame, appearance=det.appearance, source=Source.DETECTOR))
            t.mark_active()
            t.recovered = True
            matched_rows.add(r)
            consumed.append(det_idx)
        for r, t in enumerate(unmatched):
            if r not in matched_rows:
                t.mark_paused()
        return consumed

    def _recover_by_proposals(self, track: Track, frame: int, pool, judge) -> None:
        """Shared shell of the iou/mixed baselines: accept iff the motion
        candidate wins ``judge`` over the proposal set."""
        props = [
            p
            for p in self._candidate_proposals(track, frame, pool, include_learned=False)
            if p.kind != ProposalKind.SEP
        ]
        winner = judge(track, props)
        if winner is not None and props[winner].kind == ProposalKind.CANDIDATE:
            self._accept_candidate(track, frame, props[winner].bbox)
        else:
            track.mark_paused()

    def _judge_iou(self, track: Track, props) -> Optional[int]:
        last_box = track.last.bbox
        overlaps = [iou(p.bbox, last_box) for p in props]
        return int(np.argmax(overlaps))

    def _judge_mixed(self, track: Track, props) -> Optional[int]:
        last = track.last
        best, best_sim = None, -np.inf
        for i, p in enumerate(props):
            if iou(p.bbox, last.bbox) < self.cfg.mixed_iou_gate:
                continue
            if p.appearance is None or last.appearance is None:
                continue
            sim = cosine_similarity(p.appearance, last.appearance)
            if sim > best_sim:
                best, best_sim = i, sim
        return best

    def _recover_busca(self, track: Track, frame: int, pool) -> None:
        if len(track.history) < self.cfg.z:
            track.mark_paused()
            return
        props = self._candidate_proposals(track, frame, pool, include_learned=True)
        window = track_window(track, self.cfg.z)
        anchor = Anchor(window[-1].bbox, window[-1].t)
        seq = assemble(window, props, anchor, self.model, self.ste_cfg, use_ste=self.cfg.ste)
        decision = forward(seq, self.model)
        if decision.outcome == Outcome.UPDATE_WITH_CANDIDATE:
            cand = next(p for p in props if p.kind == ProposalKind.CANDIDATE)
            self._accept_candidate(track, frame, cand.bbox)
        else:
            track.mark_paused()

    # -- main loop -------------------------------------------------------------

    def step(self, frame: int, detections: Sequence[Detection]) -> FrameResult:
        """Process one frame; returns the immutable per-frame output."""
        if self.last_frame is not None and frame <= self.last_frame:
            raise ValueError(f"frame {frame} not after {self.last_frame} (online contract)")
        cfg = self.cfg

        live = self._live()
        for t in live:
            t.mean, t.covariance = kalman_predict((t.mean, t.covariance))
            # A long prediction-only stretch can drive the extent negative;
            # floor it so downstream geometry stays valid.
            t.mean[2] = max(t.mean[2], 1e-3)
            t.mean[3] = max(t.mean[3], 2.0)

        assignment = associate(detections, live, cfg, frame)
        matched_pool = [(live[ti].track_id, live[ti].last) for ti, _ in assignment.pairs]
        unmatched_tracks = [live[i] for i in assignment.unmatched_tracks]
        leftovers = [(i, detections[i]) for i in assignment.unmatched_detections]

        consumed: List[int] = []
        if cfg.recovery == "none":
            for t in unmatched_tracks:
                t.mark_paused()
        elif cfg.recovery == "ld":
            consumed = self._recover_ld(unmatched_tracks, leftovers, frame)
        elif cfg.recovery == "iou":
            for t in unmatched_tracks:
                self._recover_by_proposals(t, frame, matched_pool, self._judge_iou)
        elif cfg.recovery == "mixed":
            for t in unmatched_tracks:
                self._recover_by_proposals(t, frame, matched_pool, self._judge_mixed)
        elif cfg.recovery == "busca":
            for t in unmatched_tracks:
                self._recover_busca(t, frame, matched_pool)

        for det_idx, det in leftovers:
            if det_idx in consumed:
                continue
            if det.confidence >= cfg.new_track_thresh:
                self._birth(det, frame)

        for t in self._live():
            if t.state == TrackState.PAUSED and t.age > cfg.max_age:
                t.mark_terminated()

        rows = tuple(
            ResultRow(t.track_id, t.last.bbox, t.state, t.recovered)
            for t in sorted(self.tracks, key=lambda t: t.track_id)
            if t.state == TrackState.ACTIVE and t.history and t.last.t == frame
        )
        self.last_frame = frame
        return FrameResult(frame=frame, rows=rows)


def run_sequence(
    tracker: Tracker, detections_by_frame: Dict[int, List[Detection]]
) -> List[FrameResult]:
    """Drive a tracker over a frame-indexed detection map, in frame order."""
    return [tracker.step(f, detections_by_frame[f]) for f in sorted(detections_by_frame)]
