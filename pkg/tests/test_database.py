import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from markseq.database import EngineConfig, MarkingSequence, SequenceDatabase, SequenceSnapshot, sequence_gaps
from markseq.errors import InvalidInputError
from markseq.geometry import Observation3D, mount_pose

from conftest import loop_snapshot


def drive_straight(db, xs, labels, frames_per_marking=1, y=0.0, noise=None, start=0):
    """One observation per marking, camera 20 m behind it."""
    frame = start
    for x, lab in zip(xs, labels):
        for _ in range(frames_per_marking):
            p = np.array([x, y, 0.0])
            if noise is not None:
                p = p + noise(frame)
            db.ingest_frame([Observation3D(frame, lab, p)], mount_pose((x - 20.0, 0.0), 0.0, 1.5, 0.14), frame)
            frame += 1
    return frame


def test_config_validation():
    with pytest.raises(InvalidInputError):
        EngineConfig(k=1)
    with pytest.raises(InvalidInputError):
        EngineConfig(epsilon=-0.1)
    with pytest.raises(InvalidInputError):
        EngineConfig(merge_radius=0)
    assert EngineConfig().replace(k=6).k == 6


def test_sequence_gaps_requires_two_entries():
    db = SequenceDatabase(EngineConfig(k=2))
    drive_straight(db, [10, 13], "ab")
    db.flush()
    assert sequence_gaps(db.complete[0]) == [3.0]
    with pytest.raises(InvalidInputError):
        sequence_gaps(db.incomplete[0])


def test_repeated_observations_merge_into_one_instance():
    db = SequenceDatabase(EngineConfig(k=2))
    pose = mount_pose((0, 0), 0, 1.5, 0.14)
    for f, dx in enumerate([0.0, 0.3, -0.2, 0.5]):
        db.ingest_frame([Observation3D(f, "arrow", np.array([10.0 + dx, 0.0, 0.0]), truth_id=3)], pose, f)
    assert len(db.instances) == 1
    inst = db.instances[0]
    assert inst.obs_count == 4
    np.testing.assert_allclose(inst.position, [10.15, 0, 0])
    assert inst.truth_id == 3
    assert db.stats.merged == 3


def test_different_label_does_not_merge():
    db = SequenceDatabase(EngineConfig(k=2))
    pose = mount_pose((0, 0), 0, 1.5, 0.14)
    db.ingest_frame([Observation3D(0, "arrow", np.array([10.0, 0, 0]))], pose, 0)
    db.ingest_frame([Observation3D(1, "diamond", np.array([10.2, 0, 0]))], pose, 1)
    assert len(db.instances) == 2


def test_stale_instance_is_not_merged():
    cfg = EngineConfig(k=2, merge_window=5)
    db = SequenceDatabase(cfg)
    pose = mount_pose((0, 0), 0, 1.5, 0.14)
    db.ingest_frame([Observation3D(0, "arrow", np.array([10.0, 0, 0]))], pose, 0)
    db.ingest_frame([Observation3D(20, "arrow", np.array([10.0, 0, 0]))], pose, 20)
    assert len(db.instances) == 2


def test_out_of_order_frame_rejected():
    db = SequenceDatabase()
    pose = mount_pose((0, 0), 0, 1.5, 0.14)
    db.ingest_frame([], pose, 5)
    with pytest.raises(InvalidInputError):
        db.ingest_frame([], pose, 4)


def test_empty_frame_needs_frame_id():
    with pytest.raises(InvalidInputError):
        SequenceDatabase().ingest_frame([], mount_pose((0, 0), 0, 1.5, 0.14))


def test_pixel_detection_without_intrinsics_rejected():
    from markseq.geometry import Detection

    with pytest.raises(InvalidInputError):
        SequenceDatabase().ingest_frame([Detection(0, 0.0, "a", (1, 1))], mount_pose((0, 0), 0, 1.5, 0.14))


def test_sliding_windows_on_one_track():
    cfg = EngineConfig(k=3)
    db = SequenceDatabase(cfg)
    xs = [10, 25, 37, 55, 70]
    labs = ["a", "b", "c", "d", "e"]
    drive_straight(db, xs, labs)
    db.flush()
    seqs = db.complete
    assert [s.labels for s in seqs] == [("a", "b", "c"), ("b", "c", "d"), ("c", "d", "e")]
    assert [s.sequence_id for s in seqs] == [0, 1, 2]
    np.testing.assert_allclose(seqs[0].gaps, [15, 12])
    np.testing.assert_allclose(seqs[2].gaps, [18, 15])
    # trailing incomplete windows stay open
    assert sorted(len(s.entries) for s in db.incomplete) == [1, 2]


def test_completion_waits_for_settling():
    cfg = EngineConfig(k=2, merge_window=3)
    db = SequenceDatabase(cfg)
    pose = mount_pose((0, 0), 0, 1.5, 0.14)
    db.ingest_frame([Observation3D(0, "a", np.array([10.0, 0, 0]))], pose, 0)
    out = db.ingest_frame([Observation3D(1, "b", np.array([20.0, 0, 0]))], pose, 1)
    assert out == [] and db.complete == []
    # a late observation still refines the open instance
    db.ingest_frame([Observation3D(3, "b", np.array([21.0, 0, 0]))], pose, 3)
    out = db.ingest_frame([], pose, 10)
    assert len(out) == 1
    np.testing.assert_allclose(out[0].gaps, [10.5])


def test_two_lanes_make_two_tracks():
    cfg = EngineConfig(k=2, lane_width=2.0)
    db = SequenceDatabase(cfg)
    for f, x in enumerate([10.0, 25.0, 40.0]):
        obs = [Observation3D(f, "a", np.array([x, 0.0, 0])), Observation3D(f, "b", np.array([x + 1, 3.5, 0]))]
        db.ingest_frame(obs, mount_pose((x - 20, 0), 0, 1.5, 0.14), f)
    db.flush()
    assert len(db.tracks) == 2
    for s in db.complete:
        assert len(set(s.labels)) == 1


def test_end_session_keeps_sequences_and_resets_tracks():
    db = SequenceDatabase(EngineConfig(k=2))
    drive_straight(db, [10, 25, 40], "abc")
    db.end_session()
    n = len(db.complete)
    assert n == 2 and db.session == 1 and db.tracks == []
    drive_straight(db, [10, 25, 40], "abc")
    db.flush()
    assert [s.session for s in db.complete] == [0, 0, 1, 1]


def test_snapshot_is_isolated_from_later_writes():
    db = SequenceDatabase(EngineConfig(k=2))
    drive_straight(db, [10, 25, 40], "abc")
    db.flush()
    snap = db.snapshot()
    before = (len(snap), snap.gap_matrix().copy(), snap.label_matrix().copy())
    drive_straight(db, [55, 70, 85], "def", start=100)
    db.flush()
    assert len(snap) == before[0] == 2
    np.testing.assert_array_equal(snap.gap_matrix(), before[1])
    np.testing.assert_array_equal(snap.label_matrix(), before[2])
    later = db.snapshot()
    assert later.version > snap.version and len(later) == 5


def test_snapshot_from_sequences_requires_dense_ids():
    seqs = loop_snapshot(seed=0, k=3)[0].sequences[:5]
    ok = SequenceSnapshot.from_sequences(seqs, EngineConfig(k=3))
    assert len(ok) == 5 and ok[4] == seqs[4]
    with pytest.raises(InvalidInputError):
        SequenceSnapshot.from_sequences(seqs[1:], EngineConfig(k=3))


def test_snapshot_buckets_group_by_labels():
    snap, _ = loop_snapshot(seed=1, k=3)
    seen = 0
    for sig, ids in snap.signatures():
        seen += len(ids)
        assert all(snap[i].labels == sig for i in ids)
        assert list(ids) == sorted(ids)
        assert snap.bucket(sig, below=ids[-1]) == list(ids[:-1])
    assert seen == len(snap)
    assert snap.bucket(("no-such",) * 3) == []


# ---------------------------------------------------------------- properties


@st.composite
def drives(draw):
    n = draw(st.integers(0, 25))
    gaps = draw(st.lists(st.floats(4.0, 30.0), min_size=n, max_size=n))
    labels = draw(st.lists(st.sampled_from("abcd"), min_size=n, max_size=n))
    repeats = draw(st.integers(1, 3))
    k = draw(st.integers(2, 6))
    return np.cumsum(gaps) + 10.0, labels, repeats, k


def _check_invariants(db: SequenceDatabase, k: int):
    seqs = db.complete
    assert [s.sequence_id for s in seqs] == list(range(len(seqs)))
    for s in seqs:
        assert len(s.entries) == k and len(s.gaps) == k - 1
        np.testing.assert_allclose(s.gaps, sequence_gaps(s), atol=1e-12)
        assert all(g >= 0 for g in s.gaps)
        ids = s.instance_ids
        assert len(set(ids)) == k
        for e in s.entries:
            inst = db.instances[e.instance_id]
            assert inst.settled and inst.label == e.label
            np.testing.assert_allclose(inst.position, e.position)
        assert s.frame_range[0] <= s.frame_range[1]
        assert s.arc_range[0] <= s.arc_range[1]


@settings(max_examples=60, deadline=None)
@given(drives(), st.integers(0, 2**16))
def test_database_invariants(drive, seed):
    xs, labels, repeats, k = drive
    rng = np.random.default_rng(seed)
    jitter = lambda f: np.array([*rng.normal(0, 0.2, 2), 0.0])
    db = SequenceDatabase(EngineConfig(k=k))
    drive_straight(db, xs, labels, frames_per_marking=repeats, noise=jitter)
    db.flush()
    _check_invariants(db, k)
    # one track, one instance per marking, n - k + 1 windows
    assert len(db.instances) == len(xs)
    assert len(db.complete) == max(0, len(xs) - k + 1)
    # windows are consecutive instances along the drive
    for s in db.complete:
        assert list(s.instance_ids) == list(range(s.instance_ids[0], s.instance_ids[0] + k))


@settings(max_examples=25, deadline=None)
@given(drives())
def test_windows_are_nested_across_k(drive):
    xs, labels, _, _ = drive
    by_k = {}
    for k in (2, 3, 4):
        db = SequenceDatabase(EngineConfig(k=k))
        drive_straight(db, xs, labels)
        db.flush()
        by_k[k] = {s.instance_ids for s in db.complete}
    for k in (3, 4):
        for ids in by_k[k]:
            assert ids[:-1] in by_k[k - 1] and ids[1:] in by_k[k - 1]


@settings(max_examples=25, deadline=None)
@given(drives(), st.integers(1, 7))
def test_completed_sequences_never_change(drive, cut):
    xs, labels, repeats, k = drive
    db = SequenceDatabase(EngineConfig(k=k))
    frozen = []
    frame = 0
    for i, (x, lab) in enumerate(zip(xs, labels)):
        for _ in range(repeats):
            frozen.extend(db.ingest_frame([Observation3D(frame, lab, np.array([x, 0.0, 0.0]))],
                                          mount_pose((x - 20.0, 0.0), 0.0, 1.5, 0.14), frame))
            frame += 1
        if i % cut == 0:
            for s in frozen:
                assert db.complete[s.sequence_id] is s
    frozen.extend(db.flush())
    assert frozen == db.complete
    _check_invariants(db, k)


def test_simulated_loop_invariants():
    snap, cfg = loop_snapshot(seed=3, lanes=2, k=4, sigma=0.3, miss=0.1, flip=0.05)
    assert len(snap) > 50
    for i in range(len(snap)):
        s = snap[i]
        assert isinstance(s, MarkingSequence) and s.sequence_id == i and len(s.entries) == cfg.k
        assert math.isclose(max(abs(a - b) for a, b in zip(s.gaps, snap.gap_matrix()[i])), 0.0, abs_tol=0)
