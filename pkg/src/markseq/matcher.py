"""Sequence matching: label identity plus relative-distance consistency."""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .database import EngineConfig, MarkingSequence, SequenceSnapshot
from .errors import InvalidInputError


class Mode(str, enum.Enum):
    PLACE = "place"  # two sessions, only cross-session pairs
    LOOP = "loop"  # one session, pairs must be well separated along the drive

    @classmethod
    def parse(cls, value) -> Mode:
        try:
            return cls(value)
        except ValueError:
            raise InvalidInputError(f"mode must be 'place' or 'loop', got {value!r}") from None


@dataclass(frozen=True, slots=True)
class MatchCandidate:
    seq_a: int
    seq_b: int
    residuals: tuple[float, ...]
    max_residual: float
    label_signature: tuple[str, ...]

    @property
    def pair(self) -> tuple[int, int]:
        return self.seq_a, self.seq_b


@dataclass(frozen=True)
class MatchReport:
    candidates: tuple[MatchCandidate, ...]
    comparisons_performed: int
    query_time: float

    def pairs(self) -> set[tuple[int, int]]:
        return {c.pair for c in self.candidates}

    def ranked(self) -> list[MatchCandidate]:
        """Best first: smallest max residual, then by pair."""
        return sorted(self.candidates, key=lambda c: (c.max_residual, c.seq_a, c.seq_b))

    def __len__(self):
        return len(self.candidates)


def sequences_match(a: MarkingSequence, b: MarkingSequence, epsilon: float) -> MatchCandidate | None:
    if len(a.entries) != len(b.entries):
        raise InvalidInputError(f"cannot compare sequences of length {len(a.entries)} and {len(b.entries)}")
    if a.labels != b.labels:
        return None
    residuals = tuple(abs(ga - gb) for ga, gb in zip(a.gaps, b.gaps))
    if not all(r <= epsilon for r in residuals):
        return None
    if a.sequence_id > b.sequence_id:
        a, b = b, a
    return MatchCandidate(a.sequence_id, b.sequence_id, residuals, max(residuals, default=0.0), a.labels)


def admissible_pair(a: MarkingSequence, b: MarkingSequence, cfg: EngineConfig, mode: Mode | str) -> bool:
    """Whether a pair may count as a candidate in the given mode.

    Place mode accepts only pairs from different sessions. Loop mode accepts
    pairs from different sessions outright; within one session the frame
    ranges must be disjoint and separated by at least
    ``min_separation_frames`` frames and ``min_separation_distance`` metres
    of driving.
    """
    mode = Mode.parse(mode)
    if a.session != b.session:
        return True
    if mode is Mode.PLACE:
        return False
    if a.frame_range[0] > b.frame_range[0]:
        a, b = b, a
    if a.frame_range[1] >= b.frame_range[0]:
        return False
    if b.frame_range[0] - a.frame_range[1] < cfg.min_separation_frames:
        return False
    return b.arc_range[0] - a.arc_range[1] >= cfg.min_separation_distance


def _report(snapshot, pairs: Iterable[tuple[int, int]], cfg, mode, comparisons, t0) -> MatchReport:
    mode = Mode.parse(mode)
    out = []
    for i, j in pairs:
        a, b = snapshot[i], snapshot[j]
        if not admissible_pair(a, b, cfg, mode):
            continue
        c = sequences_match(a, b, cfg.epsilon)
        if c is not None:
            out.append(c)
    out.sort(key=lambda c: (c.seq_a, c.seq_b))
    return MatchReport(tuple(out), comparisons, time.perf_counter() - t0)


def _check_k(snapshot: SequenceSnapshot, cfg: EngineConfig):
    if snapshot.k != cfg.k:
        raise InvalidInputError(f"snapshot has k={snapshot.k}, config has k={cfg.k}")


def batch_match(snapshot: SequenceSnapshot, cfg: EngineConfig, mode: Mode | str, backend: str | None = None) -> MatchReport:
    """Compare every unordered pair of complete sequences.

    ``comparisons_performed`` is N(N-1)/2: every pair is visited, whether
    it is rejected by admissibility, by labels, or by gaps.
    """
    t0 = time.perf_counter()
    _check_k(snapshot, cfg)
    n = len(snapshot)
    ia, ib = kernels.get(backend).pair_scan(snapshot.label_matrix(), snapshot.gap_matrix(), cfg.epsilon)
    return _report(snapshot, zip(ia.tolist(), ib.tolist()), cfg, mode, n * (n - 1) // 2, t0)


def indexed_match(snapshot: SequenceSnapshot, cfg: EngineConfig, mode: Mode | str, backend: str | None = None) -> MatchReport:
    """Like :func:`batch_match` but only compares sequences sharing a label tuple."""
    t0 = time.perf_counter()
    _check_k(snapshot, cfg)
    kern = kernels.get(backend)
    gaps = snapshot.gap_matrix()
    pairs = []
    comparisons = 0
    for _, ids in snapshot.signatures():
        m = len(ids)
        comparisons += m * (m - 1) // 2
        if m < 2:
            continue
        idx = np.asarray(ids, dtype=np.int64)
        ia, ib = kern.pair_scan(np.zeros((m, 1), np.int32), gaps[idx], cfg.epsilon)
        pairs.extend(zip(idx[ia].tolist(), idx[ib].tolist()))
    return _report(snapshot, pairs, cfg, mode, comparisons, t0)


def incremental_match(
    snapshot: SequenceSnapshot,
    new_sequences: Sequence[MarkingSequence],
    cfg: EngineConfig,
    mode: Mode | str,
    indexed: bool = False,
    backend: str | None = None,
) -> MatchReport:
    """Match freshly completed sequences against everything before them.

    Each new sequence is compared with every snapshot sequence whose id is
    smaller than its own, which covers the prior history and the earlier
    members of ``new_sequences``. A query that is not in the snapshot (id
    ``>= len(snapshot)``) is compared with the whole snapshot. With
    ``indexed=True`` only sequences sharing the query's label tuple are
    visited.
    """
    t0 = time.perf_counter()
    _check_k(snapshot, cfg)
    kern = kernels.get(backend)
    mode = Mode.parse(mode)
    comparisons = 0
    out = []
    for s in sorted(new_sequences, key=lambda s: s.sequence_id):
        if len(s.entries) != cfg.k:
            raise InvalidInputError(f"sequence {s.sequence_id} has {len(s.entries)} entries, expected {cfg.k}")
        below = min(s.sequence_id, len(snapshot))
        if indexed:
            ids = snapshot.bucket(s.labels, below)
            comparisons += len(ids)
            if not ids:
                continue
            idx = np.asarray(ids, dtype=np.int64)
            hits = idx[kern.query_scan(np.zeros(1, np.int32), s.gaps, np.zeros((len(ids), 1), np.int32),
                                       snapshot.gap_matrix()[idx], len(ids), cfg.epsilon)]
        else:
            comparisons += below
            codes = snapshot.encode(s.labels)
            if codes is None:
                continue
            hits = kern.query_scan(codes, s.gaps, snapshot.label_matrix(), snapshot.gap_matrix(), below, cfg.epsilon)
        for j in hits.tolist():
            other = snapshot[j]
            if not admissible_pair(other, s, cfg, mode):
                continue
            c = sequences_match(other, s, cfg.epsilon)
            if c is not None:
                out.append(c)
    out.sort(key=lambda c: (c.seq_a, c.seq_b))
    return MatchReport(tuple(out), comparisons, time.perf_counter() - t0)
