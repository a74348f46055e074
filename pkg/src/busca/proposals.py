"""Proposal-set construction for one unmatched track.

A proposal set bundles everything the decision model may pick to extend a
track: the motion-model candidate, up to Q contextual boxes borrowed from
tracks matched in the current frame, and the two learned outcome tokens.
Separator registers follow every proposal, carrying the coordinates of
the proposal they delimit.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import BBox, Observation, Track
from .geometry import select_neighbors
from .kalman import state_bbox


class ProposalError(ValueError):
    pass


class ProposalKind(Enum):
    CANDIDATE = "candidate"
    CONTEXTUAL = "contextual"
    MISS = "miss"
    HALLUC = "halluc"
    SEP = "sep"


@dataclass(frozen=True)
class Proposal:
    kind: ProposalKind
    bbox: BBox
    t: int
    appearance: Optional[np.ndarray] = None  # None for learned tokens
    clamped: bool = False  # candidate was pushed back inside the frame


def _clamp_to_frame(box: BBox, w: float, h: float) -> BBox:
    return BBox(
        cx=min(max(box.cx, 0.0), w),
        cy=min(max(box.cy, 0.0), h),
        w=min(box.w, w),
        h=min(box.h, h),
    )


def build_proposals(
    track: Track,
    frame: int,
    matched_pool: Sequence[Tuple[int, Observation]],
    frame_size: Tuple[float, float],
    q: int = 4,
    zeta: float = 1.0,
    include_ctx: bool = True,
    include_miss: bool = True,
    include_halluc: bool = True,
    extract_appearance: Optional[Callable[[BBox], np.ndarray]] = None,
) -> List[Proposal]:
    """Ordered proposal list for ``track`` at the current ``frame``.

    Layout: candidate, then contextual neighbors, then the learned miss
    and hallucination tokens, each followed by its separator. The
    candidate box is the track's current motion prediction; its
    appearance comes from ``extract_appearance`` when an image is at hand
    and otherwise falls back to the track's last stored appearance.

    ``matched_pool`` holds (track_id, observation) pairs of tracks that
    were matched this frame; contextuals are the closest pool entries
    inside the track's neighborhood.
    """
    if track.mean is None:
        raise ProposalError(f"track {track.track_id} has no motion state")
    if track.mean[3] <= 0.0 or track.mean[2] <= 0.0:
        raise ProposalError(
            f"track {track.track_id}: degenerate predicted extent "
            f"(aspect={track.mean[2]:.3g}, h={track.mean[3]:.3g})"
        )
    fw, fh = frame_size
    cand_box = state_bbox((track.mean, track.covariance))
    clamped = False
    if cand_box.x2 <= 0 or cand_box.x1 >= fw or cand_box.y2 <= 0 or cand_box.y1 >= fh:
        cand_box = _clamp_to_frame(cand_box, fw, fh)
        clamped = True

    if extract_appearance is not None:
        cand_app = extract_appearance(cand_box)
    else:
        cand_app = track.last.appearance
    if cand_app is None:
        raise ProposalError(f"track {track.track_id} has no appearance for the candidate")

    out: List[Proposal] = []

    def _push(p: Proposal) -> None:
        out.append(p)
        out.append(Proposal(kind=ProposalKind.SEP, bbox=p.bbox, t=p.t))

    _push(Proposal(ProposalKind.CANDIDATE, cand_box, frame, cand_app, clamped=clamped))

    if include_ctx and q > 0:
        for _, obs in select_neighbors(cand_box, matched_pool, q, zeta):
            if obs.appearance is None:
                continue
            _push(Proposal(ProposalKind.CONTEXTUAL, obs.bbox, obs.t, obs.appearance))

    last = track.last
    if include_miss:
        _push(Proposal(ProposalKind.MISS, last.bbox, last.t))
    if include_halluc:
        # Coordinates are placeholders: the encoder swaps in the saturated
        # far-away channels for this token.
        _push(Proposal(ProposalKind.HALLUC, last.bbox, last.t))
    return out
