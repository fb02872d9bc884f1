"""k-sweeps, candidate scoring and query-latency benchmarks."""

from __future__ import annotations

import csv
import io
import math
import statistics
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .database import EngineConfig, MarkingSequence, SequenceDatabase, SequenceEntry
from .errors import InvalidInputError
from .geometry import CameraIntrinsics, GroundPlane, Observation3D, mount_pose
from .matcher import Mode, batch_match, incremental_match, indexed_match
from .simulator import SessionLog, ground_truth_pairs

SWEEP_COLUMNS = ("k", "num_candidates", "pct_correct", "pct_incorrect")
LATENCY_COLUMNS = ("N", "mean", "median", "p99", "comparisons", "path", "update_mean")


@dataclass(frozen=True)
class SweepRow:
    k: int
    num_candidates: int
    pct_correct: float | None  # None when there are no candidates
    pct_incorrect: float | None

    @property
    def defined(self) -> bool:
        return self.pct_correct is not None


@dataclass(frozen=True)
class LatencyReport:
    db_size: int
    mean: float
    median: float
    p99: float
    comparisons: int
    path: str = "indexed"
    update_mean: float = 0.0


def score_candidates(candidates: Iterable, truth: set) -> tuple[int, float | None, float | None]:
    """Count candidates and the share (percent) that are true pairs.

    ``candidates`` may hold :class:`MatchCandidate` objects or (a, b) tuples.
    Percentages are None for an empty candidate set.
    """
    pairs = {c.pair if hasattr(c, "pair") else tuple(c) for c in candidates}
    n = len(pairs)
    if n == 0:
        return 0, None, None
    good = len(pairs & truth)
    pct = 100.0 * good / n
    return n, pct, 100.0 - pct


def build_database(
    logs: Sequence[SessionLog],
    cfg: EngineConfig,
    intrinsics: CameraIntrinsics | None = None,
    plane: GroundPlane | None = None,
) -> SequenceDatabase:
    """Ingest one session per log into a fresh database."""
    if intrinsics is None and logs:
        intrinsics = logs[0].rig.intrinsics
    db = SequenceDatabase(cfg, intrinsics, plane)
    for i, log in enumerate(logs):
        if i:
            db.end_session()
        for f, pose, dets in log.frames():
            db.ingest_frame(dets, pose, f)
    db.flush()
    return db


def sweep_k(
    logs: Sequence[SessionLog],
    k_range: Iterable[int],
    cfg: EngineConfig,
    mode: Mode | str,
    intrinsics: CameraIntrinsics | None = None,
    plane: GroundPlane | None = None,
) -> list[SweepRow]:
    """One scored match run per window size.

    The database is rebuilt from the logs for every k and matched with
    :func:`indexed_match`; candidates are scored against the simulator's
    truth links.
    """
    mode = Mode.parse(mode)
    ks = list(k_range)
    if any(k < 2 for k in ks):
        raise InvalidInputError("window size k must be >= 2")
    rows = []
    for k in ks:
        c = cfg.replace(k=k)
        snap = build_database(logs, c, intrinsics, plane).snapshot()
        report = indexed_match(snap, c, mode)
        truth = ground_truth_pairs(snap, c, mode)
        n, good, bad = score_candidates(report.candidates, truth)
        rows.append(SweepRow(k, n, good, bad))
    return rows


def _fmt_pct(v: float | None) -> str:
    return "NA" if v is None else f"{v:.2f}"


def sweep_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r.k, r.num_candidates, _fmt_pct(r.pct_correct), _fmt_pct(r.pct_incorrect)])
    return buf.getvalue()


def sweep_from_csv(text: str) -> list[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != SWEEP_COLUMNS:
        raise InvalidInputError(f"unexpected sweep header {header!r}")
    rows = []
    for rec in reader:
        k, n, good, bad = rec
        rows.append(
            SweepRow(int(k), int(n), None if good == "NA" else float(good), None if bad == "NA" else float(bad))
        )
    return rows


def latency_to_csv(reports: Sequence[LatencyReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LATENCY_COLUMNS)
    for r in reports:
        w.writerow([r.db_size, f"{r.mean:.9f}", f"{r.median:.9f}", f"{r.p99:.9f}", r.comparisons, r.path, f"{r.update_mean:.9f}"])
    return buf.getvalue()


def synthetic_database(n: int, cfg: EngineConfig, seed: int = 0, alphabet_size: int = 8) -> SequenceDatabase:
    """Database holding exactly ``n`` complete sequences.

    A single straight track of ``n + k - 1`` markings with random labels and
    random 5..25 m spacing, one observation each, fed through the normal
    ingestion path.
    """
    rng = np.random.default_rng(seed)
    db = SequenceDatabase(cfg)
    total = n + cfg.k - 1 if n > 0 else 0
    x = 0.0
    labels = [f"class-{i}" for i in range(alphabet_size)]
    for f in range(total):
        x += float(rng.uniform(5.0, 25.0))
        pose = mount_pose((x - 20.0, 0.0), 0.0, 1.5, 0.14)
        obs = Observation3D(f, labels[int(rng.integers(alphabet_size))], np.array([x, 0.0, 0.0]))
        db.ingest_frame([obs], pose, f)
    db.flush()
    return db


def _random_query(rng, cfg: EngineConfig, seq_id: int, alphabet_size: int) -> MarkingSequence:
    gaps = rng.uniform(5.0, 25.0, size=cfg.k - 1)
    xs = np.concatenate([[0.0], np.cumsum(gaps)])
    entries = tuple(
        SequenceEntry(-1 - i, f"class-{int(rng.integers(alphabet_size))}", (float(x), 0.0, 0.0), 0, 0)
        for i, x in enumerate(xs)
    )
    gaps = tuple(float(abs(b - a)) for a, b in zip(xs, xs[1:]))
    return MarkingSequence(seq_id, entries, gaps, (0, 0), (0.0, 0.0), session=1)


def bench_query(
    sizes: Iterable[int],
    cfg: EngineConfig,
    inquiries: int = 200,
    paths: Sequence[str] = ("indexed", "brute"),
    seed: int = 0,
    backend: str | None = None,
) -> list[LatencyReport]:
    """Time place-recognition inquiries against databases of growing size.

    An inquiry is one :func:`incremental_match` call for one new sequence.
    Database update cost (one ``ingest_frame`` completing one sequence) is
    timed separately and reported as ``update_mean``.
    """
    if inquiries < 1:
        raise InvalidInputError("need at least one inquiry")
    out = []
    for n in sizes:
        db = synthetic_database(n, cfg, seed)
        snap = db.snapshot()
        rng = np.random.default_rng([seed, n])
        queries = [_random_query(rng, cfg, n, 8) for _ in range(inquiries)]
        update = _time_updates(db, cfg, rng)
        for path in paths:
            times, comps = [], 0
            for q in queries:
                t0 = time.perf_counter()
                rep = incremental_match(snap, [q], cfg, Mode.PLACE, indexed=(path == "indexed"), backend=backend)
                times.append(time.perf_counter() - t0)
                comps += rep.comparisons_performed
            times.sort()
            p99 = times[min(len(times) - 1, math.ceil(0.99 * len(times)) - 1)]
            out.append(
                LatencyReport(n, statistics.fmean(times), statistics.median(times), p99, comps // len(queries), path, update)
            )
    return out


def _time_updates(db: SequenceDatabase, cfg: EngineConfig, rng, count: int = 50) -> float:
    # continue the synthetic track; merge_window + 1 frames per marking so
    # every call completes exactly one sequence once the pipeline is full
    last = db.instances[-1].position[0] if db.instances else 0.0
    frame = (db._last_frame or 0) + 1
    x = float(last)
    times = []
    for _ in range(count):
        x += float(rng.uniform(5.0, 25.0))
        obs = Observation3D(frame, "class-0", np.array([x, 0.0, 0.0]))
        t0 = time.perf_counter()
        db.ingest_frame([obs], mount_pose((x - 20.0, 0.0), 0.0, 1.5, 0.14), frame)
        times.append(time.perf_counter() - t0)
        frame += cfg.merge_window + 1
    return statistics.fmean(times)
