import numpy as np
import pytest

from busca.core import BBox, TrackState
from busca.mot_io import (
    MotFormatError,
    MotRow,
    detections_by_frame,
    gt_by_frame,
    hyp_by_frame,
    parse_mot,
    write_detections,
    write_gt,
    write_results,
)
from busca.synth import SceneConfig, generate_scene, inject_detector
from busca.tracker import FrameResult, ResultRow


def write(tmp_path, text, name="rows.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParse:
    def test_corner_to_center_conversion(self, tmp_path):
        p = write(tmp_path, "1,2,100,150,20,40,0.9,-1,-1,-1\n")
        rows = parse_mot(p)
        assert len(rows) == 1
        r = rows[0]
        assert (r.frame, r.obj_id) == (1, 2)
        assert r.bbox == BBox(cx=110.0, cy=170.0, w=20.0, h=40.0)
        assert r.conf == pytest.approx(0.9)
        assert r.extra == -1.0

    def test_last_column_carries_visibility(self, tmp_path):
        p = write(tmp_path, "3,7,0,0,10,10,1,-1,-1,0.45\n")
        assert parse_mot(p)[0].extra == pytest.approx(0.45)

    def test_seven_field_rows_accepted(self, tmp_path):
        p = write(tmp_path, "1,1,0,0,10,10,0.5\n")
        r = parse_mot(p)[0]
        assert r.conf == 0.5
        assert r.extra == -1.0

    def test_blank_lines_skipped(self, tmp_path):
        p = write(tmp_path, "\n1,1,0,0,10,10,1,-1,-1,-1\n\n\n2,1,5,0,10,10,1,-1,-1,-1\n")
        assert [r.frame for r in parse_mot(p)] == [1, 2]

    def test_empty_file_gives_no_rows(self, tmp_path):
        assert parse_mot(write(tmp_path, "")) == []

    def test_short_row_rejected_with_line_number(self, tmp_path):
        p = write(tmp_path, "1,1,0,0,10,10,1,-1,-1,-1\n1,2,3\n")
        with pytest.raises(MotFormatError, match=r":2:"):
            parse_mot(p)

    def test_non_numeric_field_rejected(self, tmp_path):
        p = write(tmp_path, "1,1,zero,0,10,10,1,-1,-1,-1\n")
        with pytest.raises(MotFormatError, match="non-numeric"):
            parse_mot(p)

    def test_non_positive_extent_rejected(self, tmp_path):
        p = write(tmp_path, "1,1,0,0,0,10,1,-1,-1,-1\n")
        with pytest.raises(MotFormatError, match="extent"):
            parse_mot(p)
        p = write(tmp_path, "1,1,0,0,10,-5,1,-1,-1,-1\n", name="neg.txt")
        with pytest.raises(MotFormatError, match="extent"):
            parse_mot(p)


class TestGrouping:
    def rows(self):
        return [
            MotRow(1, -1, BBox(10, 10, 4, 4), 0.9, -1.0),
            MotRow(1, -1, BBox(30, 10, 4, 4), 0.8, -1.0),
            MotRow(3, -1, BBox(50, 10, 4, 4), 0.7, -1.0),
        ]

    def test_detections_grouped_in_file_order(self):
        by_frame = detections_by_frame(self.rows())
        assert sorted(by_frame) == [1, 3]
        assert [d.bbox.cx for d in by_frame[1]] == [10, 30]
        assert all(d.appearance is None for d in by_frame[1])

    def test_confidence_clamped_into_unit_range(self):
        rows = [MotRow(1, -1, BBox(10, 10, 4, 4), 1.7, -1.0)]
        assert detections_by_frame(rows)[1][0].confidence == 1.0

    def test_features_attached_by_frame_and_index(self):
        feats = {
            (1, 0): np.ones(4, np.float32),
            (1, 1): np.full(4, 2.0, np.float32),
            (3, 0): np.full(4, 3.0, np.float32),
        }
        by_frame = detections_by_frame(self.rows(), feats)
        np.testing.assert_array_equal(by_frame[1][1].appearance, feats[(1, 1)])
        np.testing.assert_array_equal(by_frame[3][0].appearance, feats[(3, 0)])

    def test_incomplete_feature_map_rejected(self):
        feats = {(1, 0): np.ones(4, np.float32)}
        with pytest.raises(MotFormatError, match="missing"):
            detections_by_frame(self.rows(), feats)

    def test_gt_view_keeps_visibility(self):
        rows = [MotRow(2, 5, BBox(10, 10, 4, 4), 1.0, 0.75)]
        assert gt_by_frame(rows) == {2: [(5, BBox(10, 10, 4, 4), 0.75)]}

    def test_hyp_view_drops_extras(self):
        rows = [MotRow(2, 5, BBox(10, 10, 4, 4), 1.0, 0.75)]
        assert hyp_by_frame(rows) == {2: [(5, BBox(10, 10, 4, 4))]}


class TestWriters:
    def test_results_round_trip_and_recovered_flag(self, tmp_path):
        results = [
            FrameResult(
                frame=2,
                rows=(
                    ResultRow(4, BBox(20.5, 30.25, 10.0, 12.0), TrackState.ACTIVE, True),
                    ResultRow(1, BBox(100.0, 50.0, 8.0, 16.0), TrackState.ACTIVE, False),
                ),
            ),
            FrameResult(
                frame=1,
                rows=(ResultRow(1, BBox(99.0, 49.0, 8.0, 16.0), TrackState.ACTIVE, False),),
            ),
        ]
        path = tmp_path / "out.txt"
        write_results(results, path)
        rows = parse_mot(path)
        # frames ascending, ids ascending inside a frame
        assert [(r.frame, r.obj_id) for r in rows] == [(1, 1), (2, 1), (2, 4)]
        assert rows[2].conf == pytest.approx(0.99)  # recovered flag value
        assert rows[1].conf == pytest.approx(1.0)
        assert rows[2].bbox.cx == pytest.approx(20.5, abs=1e-6)
        assert rows[2].bbox.cy == pytest.approx(30.25, abs=1e-6)

    def test_writers_are_deterministic(self, tmp_path):
        scene = generate_scene(SceneConfig(width=200, height=150, n_objects=3, n_frames=5))
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        write_gt(scene, a)
        write_gt(scene, b)
        assert a.read_bytes() == b.read_bytes()

    def test_gt_round_trip(self, tmp_path):
        scene = generate_scene(SceneConfig(width=200, height=150, n_objects=3, n_frames=4))
        path = tmp_path / "gt.txt"
        write_gt(scene, path)
        rows = parse_mot(path)
        assert len(rows) == 12
        assert min(r.frame for r in rows) == 1  # frames are 1-based on disk
        by_frame = gt_by_frame(rows)
        for f, frame_rows in enumerate(scene.frames):
            got = {oid: (b, v) for oid, b, v in by_frame[f + 1]}
            for g in frame_rows:
                b, v = got[g.obj_id]
                assert b.cx == pytest.approx(g.bbox.cx, abs=1e-6)
                assert b.w == pytest.approx(g.bbox.w, abs=1e-6)
                assert v == pytest.approx(g.visibility, abs=1e-6)

    def test_detections_round_trip(self, tmp_path):
        scene = generate_scene(SceneConfig(width=200, height=150, n_objects=3, n_frames=4))
        dets = inject_detector(scene)
        path = tmp_path / "det.txt"
        write_detections(dets, path)
        rows = parse_mot(path)
        assert all(r.obj_id == -1 for r in rows)
        by_frame = detections_by_frame(rows)
        for f, frame_dets in enumerate(dets):
            if not frame_dets:
                assert (f + 1) not in by_frame
                continue
            got = by_frame[f + 1]
            assert len(got) == len(frame_dets)
            for d, g in zip(frame_dets, got):
                assert g.bbox.cx == pytest.approx(d.bbox.cx, abs=1e-6)
                assert g.bbox.h == pytest.approx(d.bbox.h, abs=1e-6)
                assert g.confidence == pytest.approx(d.confidence, abs=1e-6)
