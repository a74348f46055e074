"""Core value types shared by every stage of the tracker.

Boxes are kept in center parameterization (cx, cy, w, h) throughout; the
corner form used by on-disk files only appears at the I/O boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np


class Source(Enum):
    """Where an observation came from."""

    DETECTOR = "detector"
    MOTION_MODEL = "motion_model"


class TrackState(Enum):
    ACTIVE = "active"
    PAUSED = "paused"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, center + extent. Width and height must be positive."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite bbox {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bbox extent must be positive, got w={self.w} h={self.h}")

    @property
    def x1(self) -> float:
        return self.cx - self.w / 2.0

    @property
    def y1(self) -> float:
        return self.cy - self.h / 2.0

    @property
    def x2(self) -> float:
        return self.cx + self.w / 2.0

    @property
    def y2(self) -> float:
        return self.cy + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    """Single detector output for one frame."""

    bbox: BBox
    confidence: float
    appearance: Optional[np.ndarray] = None  # unit-norm feature, or None

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence outside [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class Observation:
    """A box committed to a track's history at frame t."""

    bbox: BBox
    t: int
    appearance: Optional[np.ndarray] = None
    source: Source = Source.DETECTOR

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"negative frame index {self.t}")


@dataclass
class Track:
    """One tracked identity. Owned and mutated only by the tracker loop.

    ``history`` is append-only through :meth:`append` and trimmed to
    ``history_cap`` entries so long runs stay bounded in memory.
    """

    track_id: int
    history: List[Observation] = field(default_factory=list)
    state: TrackState = TrackState.ACTIVE
    age: int = 0  # frames since last observation while paused
    mean: Optional[np.ndarray] = None  # motion state, set by the tracker
    covariance: Optional[np.ndarray] = None
    history_cap: int = 44
    recovered: bool = False  # last observation came from a recovery step

    def append(self, obs: Observation) -> None:
        if self.state is TrackState.TERMINATED:
            raise ValueError(f"track {self.track_id} is terminated")
        if self.history and obs.t <= self.history[-1].t:
            raise ValueError(
                f"track {self.track_id}: observation at t={obs.t} not after "
                f"t={self.history[-1].t}"
            )
        self.history.append(obs)
        if len(self.history) > self.history_cap:
            del self.history[: len(self.history) - self.history_cap]

    @property
    def last(self) -> Observation:
        if not self.history:
            raise ValueError(f"track {self.track_id} has no observations")
        return self.history[-1]

    def mark_active(self) -> None:
        self.state = TrackState.ACTIVE
        self.age = 0

    def mark_paused(self) -> None:
        if self.state is TrackState.TERMINATED:
            raise ValueError(f"track {self.track_id} is terminated")
        self.state = TrackState.PAUSED
        self.age += 1

    def mark_terminated(self) -> None:
        self.state = TrackState.TERMINATED


@dataclass(frozen=True)
class AssignmentSet:
    """Result of one association round over T tracks and D detections.

    Matched pairs plus the two leftover index lists form an exact partition:
    every track index occurs exactly once, every detection index too.
    """

    pairs: Tuple[Tuple[int, int], ...]
    unmatched_tracks: Tuple[int, ...]
    unmatched_detections: Tuple[int, ...]

    def validate(self, n_tracks: int, n_detections: int) -> None:
        t_seen = sorted([p[0] for p in self.pairs] + list(self.unmatched_tracks))
        d_seen = sorted([p[1] for p in self.pairs] + list(self.unmatched_detections))
        if t_seen != list(range(n_tracks)):
            raise ValueError(f"track indices do not partition 0..{n_tracks - 1}: {t_seen}")
        if d_seen != list(range(n_detections)):
            raise ValueError(f"detection indices do not partition 0..{n_detections - 1}: {d_seen}")


def track_window(track: Track, z: int) -> List[Observation]:
    """Last ``min(z, len(history))`` observations, oldest first."""
    if z <= 0:
        raise ValueError(f"window size must be positive, got {z}")
    return list(track.history[-z:])
