import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from busca.core import (
    AssignmentSet,
    BBox,
    Detection,
    Observation,
    Source,
    Track,
    TrackState,
    track_window,
)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False)
positive = st.floats(min_value=1e-3, max_value=1e6, allow_nan=False)


class TestBBox:
    def test_corner_properties(self):
        b = BBox(cx=110.0, cy=170.0, w=20.0, h=40.0)
        assert (b.x1, b.y1, b.x2, b.y2) == (100.0, 150.0, 120.0, 190.0)
        assert b.area == 800.0

    @pytest.mark.parametrize("w,h", [(0.0, 10.0), (10.0, 0.0), (-1.0, 10.0), (10.0, -5.0)])
    def test_rejects_nonpositive_extent(self, w, h):
        with pytest.raises(ValueError):
            BBox(0.0, 0.0, w, h)

    @pytest.mark.parametrize("bad", [float("nan"), float("inf"), -float("inf")])
    def test_rejects_nonfinite(self, bad):
        with pytest.raises(ValueError):
            BBox(bad, 0.0, 10.0, 10.0)
        with pytest.raises(ValueError):
            BBox(0.0, 0.0, 10.0, bad)

    @given(cx=finite, cy=finite, w=positive, h=positive)
    def test_center_is_corner_midpoint(self, cx, cy, w, h):
        b = BBox(cx, cy, w, h)
        assert math.isclose((b.x1 + b.x2) / 2.0, cx, rel_tol=1e-9, abs_tol=1e-9)
        assert math.isclose((b.y1 + b.y2) / 2.0, cy, rel_tol=1e-9, abs_tol=1e-9)


class TestDetection:
    def test_confidence_bounds(self):
        box = BBox(0, 0, 5, 5)
        Detection(box, 0.0)
        Detection(box, 1.0)
        with pytest.raises(ValueError):
            Detection(box, 1.1)
        with pytest.raises(ValueError):
            Detection(box, -0.01)


class TestObservation:
    def test_negative_frame_rejected(self):
        with pytest.raises(ValueError):
            Observation(BBox(0, 0, 5, 5), t=-1)

    def test_default_source_is_detector(self):
        assert Observation(BBox(0, 0, 5, 5), t=0).source is Source.DETECTOR


def _obs(t):
    return Observation(BBox(float(t), 0.0, 5.0, 5.0), t=t)


class TestTrack:
    def test_append_requires_increasing_time(self):
        tr = Track(track_id=1)
        tr.append(_obs(3))
        with pytest.raises(ValueError):
            tr.append(_obs(3))
        with pytest.raises(ValueError):
            tr.append(_obs(2))
        tr.append(_obs(4))
        assert [o.t for o in tr.history] == [3, 4]

    def test_history_cap_keeps_newest(self):
        tr = Track(track_id=1, history_cap=5)
        for t in range(12):
            tr.append(_obs(t))
        assert [o.t for o in tr.history] == [7, 8, 9, 10, 11]

    def test_last_on_empty_track(self):
        with pytest.raises(ValueError):
            Track(track_id=1).last

    def test_terminated_track_is_frozen(self):
        tr = Track(track_id=1)
        tr.append(_obs(0))
        tr.mark_terminated()
        with pytest.raises(ValueError):
            tr.append(_obs(1))
        with pytest.raises(ValueError):
            tr.mark_paused()

    def test_pause_ages_and_active_resets(self):
        tr = Track(track_id=1)
        tr.mark_paused()
        tr.mark_paused()
        assert tr.state is TrackState.PAUSED and tr.age == 2
        tr.mark_active()
        assert tr.state is TrackState.ACTIVE and tr.age == 0


class TestAssignmentSet:
    def test_validate_accepts_partition(self):
        a = AssignmentSet(pairs=((0, 1), (2, 0)), unmatched_tracks=(1,), unmatched_detections=(2,))
        a.validate(n_tracks=3, n_detections=3)

    def test_validate_rejects_duplicate_track(self):
        a = AssignmentSet(pairs=((0, 0), (0, 1)), unmatched_tracks=(1,), unmatched_detections=())
        with pytest.raises(ValueError):
            a.validate(n_tracks=2, n_detections=2)

    def test_validate_rejects_missing_detection(self):
        a = AssignmentSet(pairs=((0, 0),), unmatched_tracks=(), unmatched_detections=())
        with pytest.raises(ValueError):
            a.validate(n_tracks=1, n_detections=2)


def test_track_window_returns_newest_oldest_first():
    tr = Track(track_id=1)
    for t in range(7):
        tr.append(_obs(t))
    win = track_window(tr, 3)
    assert [o.t for o in win] == [4, 5, 6]
    assert [o.t for o in track_window(tr, 99)] == list(range(7))
    with pytest.raises(ValueError):
        track_window(tr, 0)


def test_track_window_is_a_copy():
    tr = Track(track_id=1)
    tr.append(_obs(0))
    win = track_window(tr, 5)
    win.append(_obs(9))
    assert len(tr.history) == 1
