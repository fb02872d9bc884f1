import json

import numpy as np
import pytest

from markseq import io as fmt
from markseq.database import EngineConfig, SequenceSnapshot
from markseq.errors import InvalidInputError, RecordError, SchemaVersionError
from markseq.geometry import CameraIntrinsics, GroundPlane, mount_pose
from markseq.matcher import batch_match

from conftest import loop_snapshot


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def test_pose_roundtrip(tmp_path):
    poses = [mount_pose((i, 2.0 * i), 0.1 * i, 1.5, 0.14) for i in range(4)]
    fmt.write_poses(tmp_path / "p.jsonl", range(4), [0.1 * i for i in range(4)], poses)
    back, skipped = fmt.read_poses(tmp_path / "p.jsonl")
    assert skipped == 0 and [f for f, _, _ in back] == [0, 1, 2, 3]
    for (_, _, p), q in zip(back, poses):
        np.testing.assert_array_equal(p.position, q.position)
        np.testing.assert_array_equal(p.orientation, q.orientation)


def test_detection_records_and_labels(tmp_path):
    path = write(tmp_path / "d.jsonl", [
        json.dumps({"schema": "markseq/1"}),
        json.dumps({"frame": 3, "t": 0.3, "label": " Crosswalk", "u": 10.5, "v": 20.0, "truth": 4}),
        json.dumps({"frame": 4, "t": 0.4, "label": "arrow", "u": 1, "v": 2}),
    ])
    dets, skipped = fmt.read_detections(path)
    assert skipped == 0
    assert dets[0].label == "crosswalk" and dets[0].truth_id == 4 and dets[0].centroid == (10.5, 20.0)
    assert dets[1].truth_id is None


def test_malformed_record_reports_line_number(tmp_path):
    path = write(tmp_path / "o.jsonl", [
        json.dumps({"frame": 0, "label": "a", "x": 1, "y": 2, "z": 0}),
        "{not json",
        json.dumps({"frame": 1.5, "label": "a", "x": 1, "y": 2, "z": 0}),
        json.dumps({"frame": 2, "label": "a", "x": 1, "y": 2}),
    ])
    with pytest.raises(RecordError) as err:
        fmt.read_observations(path)
    assert err.value.lineno == 2 and ":2:" in str(err.value)
    obs, skipped = fmt.read_observations(path, skip_bad=True)
    assert len(obs) == 1 and skipped == 3


def test_schema_mismatch_is_fatal_even_when_skipping(tmp_path):
    path = write(tmp_path / "o.jsonl", [json.dumps({"schema": "markseq/2"})])
    with pytest.raises(SchemaVersionError):
        fmt.read_observations(path, skip_bad=True)


def test_missing_file(tmp_path):
    with pytest.raises(InvalidInputError):
        fmt.read_poses(tmp_path / "nope.jsonl")


def test_config_roundtrip(tmp_path):
    cfg = EngineConfig(k=6, epsilon=0.25, min_separation_frames=50)
    intr = CameraIntrinsics(400.0, 410.0, 320.0, 240.0, 640, 480)
    plane = GroundPlane(normal=[0.0, 0.6, 0.8], offset=-1.25)
    fmt.write_config(tmp_path / "e.cfg", cfg, intr, plane)
    c2, i2, p2 = fmt.read_config(tmp_path / "e.cfg")
    assert c2 == cfg and i2 == intr
    np.testing.assert_array_equal(p2.normal, plane.normal)
    assert p2.offset == plane.offset


@pytest.mark.parametrize(
    "text,exc",
    [
        ("k = 4\nbogus = 1\n", RecordError),
        ("k = four\n", RecordError),
        ("k 4\n", RecordError),
        ("schema = markseq/9\n", SchemaVersionError),
        ("fx = 500\n", InvalidInputError),
        ("k = 1\n", InvalidInputError),
    ],
)
def test_config_errors(tmp_path, text, exc):
    (tmp_path / "e.cfg").write_text(text)
    with pytest.raises(exc):
        fmt.read_config(tmp_path / "e.cfg")


def test_config_comments_and_defaults(tmp_path):
    (tmp_path / "e.cfg").write_text("# engine\nk = 5  # window\n\n")
    cfg, intr, plane = fmt.read_config(tmp_path / "e.cfg")
    assert cfg == EngineConfig(k=5) and intr is None and plane.offset == 0.0


def test_database_roundtrip_preserves_matches(tmp_path):
    snap, cfg = loop_snapshot(seed=0, k=3, sigma=0.3)
    fmt.write_database(tmp_path / "db.jsonl", snap)
    cfg2, seqs, sessions = fmt.read_database(tmp_path / "db.jsonl")
    assert cfg2 == cfg and sessions == 1 and tuple(seqs) == snap.sequences
    snap2 = SequenceSnapshot.from_sequences(seqs, cfg2)
    assert batch_match(snap2, cfg2, "loop").candidates == batch_match(snap, cfg, "loop").candidates


def test_database_header_checks(tmp_path):
    snap, _ = loop_snapshot(seed=0, k=3)
    fmt.write_database(tmp_path / "db.jsonl", snap)
    lines = (tmp_path / "db.jsonl").read_text().splitlines()
    write(tmp_path / "short.jsonl", lines[:-1])
    with pytest.raises(InvalidInputError):
        fmt.read_database(tmp_path / "short.jsonl")
    write(tmp_path / "plain.jsonl", lines[1:])
    with pytest.raises(SchemaVersionError):
        fmt.read_database(tmp_path / "plain.jsonl")


def test_report_csv_layout(tmp_path):
    snap, cfg = loop_snapshot(seed=0, k=4)
    rep = batch_match(snap, cfg, "loop")
    fmt.write_report_csv(tmp_path / "c.csv", rep, snap)
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "seq_a,seq_b,max_residual,residual_0,residual_1,residual_2,a_frame_start,a_frame_end,b_frame_start,b_frame_end"
    assert len(rows) == len(rep) + 1
    first = rows[1].split(",")
    c = rep.candidates[0]
    assert (int(first[0]), int(first[1])) == c.pair and float(first[2]) == c.max_residual


def test_truth_csv_roundtrip(tmp_path):
    truth = [(0, "arrow", (1.0, 2.5, 0.0), 0), (1, "crosswalk", (3.0, -1.0, 0.0), 1)]
    fmt.write_truth_csv(tmp_path / "t.csv", truth)
    assert fmt.read_truth_csv(tmp_path / "t.csv") == truth
