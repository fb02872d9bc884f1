"""Online database of road-marking sequences.

Observations of the same physical marking over consecutive frames are merged
into one :class:`MarkingInstance`. New instances are assigned to a per-lane
track, and each track grows every window of ``k`` consecutive instances as a
sequence. A window that has ``k`` entries is frozen into the append-only
``complete`` list once all of its entries have stopped receiving observations,
so its stored positions and gaps never change afterwards.
"""

from __future__ import annotations

import itertools
import logging
import math
from bisect import bisect_left
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Detection,
    GroundPlane,
    Observation3D,
    localize_detection,
)

logger = logging.getLogger(__name__)

# camera positions kept for the curvature estimate
TRAIL_STEP = 1.0
TRAIL_LENGTH = 12.0


@dataclass(frozen=True)
class EngineConfig:
    """Engine parameters.

    Attributes:
        k: search window size, the number of markings per sequence.
        epsilon: per-gap tolerance (m) when comparing relative distances.
        merge_radius: observations of the same label closer than this to an
            open instance are merged into it (m).
        lane_width: lateral distance (m) within which a new instance extends
            an existing track.
        min_separation_frames: loop mode, minimum frame gap between matched
            sequences.
        min_separation_distance: loop mode, minimum driven distance (m)
            between matched sequences.
        merge_window: an instance unseen for more than this many frames is
            settled and stops accepting observations.
        track_max_gap: a track whose last instance is farther than this (m)
            from a new instance is not extended by it.
    """

    k: int = 4
    epsilon: float = 1.0
    merge_radius: float = 1.5
    lane_width: float = 2.0
    min_separation_frames: int = 200
    min_separation_distance: float = 100.0
    merge_window: int = 5
    track_max_gap: float = 60.0

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 2:
            raise InvalidInputError(f"k must be an integer >= 2, got {self.k!r}")
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "merge_window":
                if v < 0:
                    raise InvalidInputError("merge_window must be >= 0")
            elif not v > 0:
                raise InvalidInputError(f"{f.name} must be positive, got {v!r}")

    def replace(self, **changes) -> EngineConfig:
        return EngineConfig(**{**asdict(self), **changes})


class MarkingInstance:
    """One physical marking, merged from repeated observations."""

    __slots__ = (
        "instance_id", "label", "track_id", "first_frame", "last_frame",
        "obs_count", "settled", "_sum", "_mean", "_truth",
    )

    def __init__(self, instance_id: int, obs: Observation3D):
        self.instance_id = instance_id
        self.label = obs.label
        self.track_id = -1
        self.first_frame = obs.frame_id
        self.last_frame = obs.frame_id
        self.obs_count = 1
        self.settled = False
        self._sum = np.array(obs.position, dtype=float)
        self._mean = self._sum.copy()
        self._truth = Counter([obs.truth_id])

    @property
    def position(self) -> np.ndarray:
        return self._mean

    @property
    def truth_id(self) -> int | None:
        # majority vote, ties to the smallest id, clutter (None) last
        best = sorted(self._truth.items(), key=lambda kv: (-kv[1], kv[0] is None, kv[0] or 0))
        return best[0][0]

    def add(self, obs: Observation3D) -> None:
        self._sum += obs.position
        self.obs_count += 1
        self._mean = self._sum / self.obs_count
        self.last_frame = max(self.last_frame, obs.frame_id)
        self._truth[obs.truth_id] += 1

    def __repr__(self):
        p = self.position
        return (
            f"MarkingInstance(id={self.instance_id}, label={self.label!r}, track={self.track_id}, "
            f"pos=({p[0]:.2f}, {p[1]:.2f}, {p[2]:.2f}), frames={self.first_frame}..{self.last_frame}, "
            f"n={self.obs_count})"
        )


@dataclass(frozen=True, slots=True)
class SequenceEntry:
    """Frozen copy of an instance taken when its sequence completes."""

    instance_id: int
    label: str
    position: tuple[float, float, float]
    first_frame: int
    last_frame: int
    truth_id: int | None = None

    @classmethod
    def of(cls, inst: MarkingInstance) -> SequenceEntry:
        return cls(
            inst.instance_id,
            inst.label,
            tuple(float(c) for c in inst.position),
            inst.first_frame,
            inst.last_frame,
            inst.truth_id,
        )


def sequence_gaps(seq) -> list[float]:
    """Euclidean distances between consecutive entries of ``seq``.

    Works on anything exposing ``entries`` with a ``position`` attribute.
    """
    entries = seq.entries
    if len(entries) < 2:
        raise InvalidInputError("gaps need at least two entries")
    return _gaps([e.position for e in entries])


def _cross(a, b) -> np.ndarray:
    # np.cross carries heavy per-call overhead for single 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _gaps(positions) -> list[float]:
    pos = [np.asarray(p, dtype=float) for p in positions]
    return [float(np.linalg.norm(b - a)) for a, b in zip(pos, pos[1:])]


@dataclass(frozen=True, slots=True)
class MarkingSequence:
    sequence_id: int
    entries: tuple[SequenceEntry, ...]
    gaps: tuple[float, ...]
    frame_range: tuple[int, int]
    arc_range: tuple[float, float] = (0.0, 0.0)
    session: int = 0
    track_id: int = 0

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(e.label for e in self.entries)

    @property
    def instance_ids(self) -> tuple[int, ...]:
        return tuple(e.instance_id for e in self.entries)

    @property
    def truth_ids(self) -> tuple[int | None, ...]:
        return tuple(e.truth_id for e in self.entries)

    def __len__(self):
        return len(self.entries)


class _OpenSequence:
    __slots__ = ("entries",)

    def __init__(self, first: MarkingInstance):
        self.entries = [first]


class _Track:
    __slots__ = ("track_id", "last", "open")

    def __init__(self, track_id: int):
        self.track_id = track_id
        self.last: MarkingInstance | None = None
        self.open: list[_OpenSequence] = []


class SequenceSnapshot:
    """Read-only view of the complete sequences at one point in time.

    Holds references to the database's append-only storage together with the
    sequence count at snapshot time; nothing below that count is ever written
    again, so the view stays stable while ingestion continues.
    """

    def __init__(self, version, config, seqs, count, labels, gaps, buckets, label_codes):
        self.version = version
        self.config = config
        self._seqs = seqs
        self._count = count
        self._labels = labels
        self._gaps = gaps
        self._buckets = buckets
        self._label_codes = label_codes
        self._tuple = None

    @classmethod
    def from_sequences(cls, sequences: Sequence[MarkingSequence], config: EngineConfig, version: int = 0):
        """Build a standalone snapshot, e.g. from sequences loaded off disk.

        Sequence ids must be 0..N-1 in order.
        """
        store = _SequenceStore(config.k)
        for i, s in enumerate(sequences):
            if s.sequence_id != i:
                raise InvalidInputError(f"sequence ids must be dense and ordered, got {s.sequence_id} at {i}")
            store.append(s)
        return store.snapshot(version, config)

    def __len__(self):
        return self._count

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def sequences(self) -> tuple[MarkingSequence, ...]:
        if self._tuple is None:
            self._tuple = tuple(self._seqs[: self._count])
        return self._tuple

    def __getitem__(self, i: int) -> MarkingSequence:
        if not 0 <= i < self._count:
            raise IndexError(i)
        return self._seqs[i]

    def label_matrix(self) -> np.ndarray:
        """(N, k) int32 label codes."""
        return self._labels[: self._count]

    def gap_matrix(self) -> np.ndarray:
        """(N, k-1) float64 gaps."""
        return self._gaps[: self._count]

    def encode(self, labels: Iterable[str]) -> np.ndarray | None:
        """Label codes of a signature, or None if a label was never seen."""
        out = []
        for lab in labels:
            c = self._label_codes.get(lab)
            if c is None:
                return None
            out.append(c)
        return np.asarray(out, dtype=np.int32)

    def bucket(self, signature: tuple[str, ...], below: int | None = None) -> list[int]:
        """Ids of sequences with this exact label tuple, ascending, id < below."""
        ids = self._buckets.get(signature)
        if not ids:
            return []
        hi = self._count if below is None else min(below, self._count)
        return ids[: bisect_left(ids, hi)]

    def signatures(self):
        for sig, ids in self._buckets.items():
            members = ids[: bisect_left(ids, self._count)]
            if members:
                yield sig, members


class _SequenceStore:
    """Append-only columnar storage shared between a database and its snapshots."""

    def __init__(self, k: int):
        self.k = k
        self.seqs: list[MarkingSequence] = []
        self.buckets: dict[tuple[str, ...], list[int]] = {}
        self.label_codes: dict[str, int] = {}
        self._labels = np.zeros((64, k), dtype=np.int32)
        self._gaps = np.zeros((64, k - 1), dtype=np.float64)

    def code(self, label: str) -> int:
        c = self.label_codes.get(label)
        if c is None:
            c = self.label_codes[label] = len(self.label_codes)
        return c

    def append(self, seq: MarkingSequence) -> None:
        if len(seq.entries) != self.k:
            raise InvalidInputError(f"complete sequences must have {self.k} entries")
        n = len(self.seqs)
        if n == len(self._labels):
            # grow into new buffers so older snapshots keep their own
            self._labels = np.concatenate([self._labels, np.zeros_like(self._labels)])
            self._gaps = np.concatenate([self._gaps, np.zeros_like(self._gaps)])
        self._labels[n] = [self.code(lab) for lab in seq.labels]
        self._gaps[n] = seq.gaps
        self.seqs.append(seq)
        self.buckets.setdefault(seq.labels, []).append(n)

    def snapshot(self, version: int, config: EngineConfig) -> SequenceSnapshot:
        return SequenceSnapshot(
            version, config, self.seqs, len(self.seqs), self._labels, self._gaps,
            self.buckets, self.label_codes,
        )


@dataclass
class IngestStats:
    frames: int = 0
    detections: int = 0
    discarded: int = 0  # rays that missed the road plane
    merged: int = 0
    instances: int = 0


class SequenceDatabase:
    """Single-writer online sequence database.

    Args:
        config: engine parameters.
        intrinsics: camera model; only needed when ingesting pixel detections.
        plane: road plane used to localize detections.
    """

    def __init__(
        self,
        config: EngineConfig | None = None,
        intrinsics: CameraIntrinsics | None = None,
        plane: GroundPlane | None = None,
    ):
        self.config = config or EngineConfig()
        self.k = self.config.k
        self.intrinsics = intrinsics
        self.plane = plane or GroundPlane()
        self.instances: list[MarkingInstance] = []
        self.stats = IngestStats()
        self.session = 0
        self._store = _SequenceStore(self.k)
        self._snapshots = itertools.count(1)
        self._reset_session_state()

    def _reset_session_state(self):
        self.tracks: list[_Track] = []
        self._active: list[MarkingInstance] = []
        self._pending: list[list[MarkingInstance]] = []
        self._last_frame: int | None = None
        self._frame_tracks: set[int] = set()
        self._positions: list[np.ndarray] = []
        self._trail: list[tuple[float, np.ndarray]] = []  # (arc, position), >= TRAIL_STEP apart
        self._arc = 0.0
        self._arc_at: dict[int, float] = {}
        self._camera_axes: tuple | None = None
        self._fwd: np.ndarray | None = None  # cached travel direction for the current pose

    # -- read side ---------------------------------------------------------

    @property
    def complete(self) -> list[MarkingSequence]:
        return self._store.seqs

    @property
    def incomplete(self) -> list[_OpenSequence]:
        return [s for t in self.tracks for s in t.open]

    def snapshot(self) -> SequenceSnapshot:
        return self._store.snapshot(next(self._snapshots), self.config)

    def arc_length_at(self, frame_id: int) -> float:
        return self._arc_at[frame_id]

    # -- write side --------------------------------------------------------

    def ingest_frame(
        self,
        detections: Sequence[Detection | Observation3D],
        pose: CameraPose,
        frame_id: int | None = None,
    ) -> list[MarkingSequence]:
        """Add one frame's detections; returns the sequences completed by it.

        ``detections`` may mix pixel :class:`Detection` objects (localized via
        the camera model) and already-localized :class:`Observation3D` records.
        ``frame_id`` is required only when the frame has no detections.
        """
        frames = {d.frame_id for d in detections}
        if frame_id is None:
            if len(frames) != 1:
                raise InvalidInputError("frame_id is required for an empty frame")
            frame_id = frames.pop()
        elif frames - {frame_id}:
            raise InvalidInputError(f"detections from frames {sorted(frames)} passed as frame {frame_id}")
        if self._last_frame is not None and frame_id < self._last_frame:
            raise InvalidInputError(f"frame {frame_id} arrived after frame {self._last_frame}")
        if frame_id != self._last_frame:
            self._frame_tracks = set()
            self.stats.frames += 1
        self._last_frame = frame_id
        self._update_pose(frame_id, pose)

        completed = self._settle(frame_id)

        observations = []
        for det in detections:
            self.stats.detections += 1
            if isinstance(det, Observation3D):
                observations.append(det)
                continue
            if self.intrinsics is None:
                raise InvalidInputError("pixel detections need camera intrinsics")
            obs = localize_detection(det, pose, self.intrinsics, self.plane)
            if obs is None:
                self.stats.discarded += 1
                logger.warning("frame %d: discarded %s detection above the horizon", frame_id, det.label)
                continue
            observations.append(obs)

        # nearest first, so instance ids follow the direction of travel
        fwd = self._travel_direction()
        observations.sort(
            key=lambda o: (float(np.dot(o.position - pose.position, fwd)), o.label, tuple(o.position))
        )
        for obs in observations:
            inst, is_new = self.merge_observation(obs)
            if is_new:
                self._extend_track(inst, self.assign_track(inst))
        return completed

    def flush(self) -> list[MarkingSequence]:
        """Settle every open instance and complete all full sequences."""
        for inst in self._active:
            inst.settled = True
        self._active = []
        return self._complete_ready()

    def end_session(self, plane: GroundPlane | None = None) -> list[MarkingSequence]:
        """Flush, then start a new session (place-recognition mode input).

        Complete sequences are kept; tracks, open sequences and the frame
        counter start over. Sessions come from independent SLAM runs, so the
        next one may express the road plane in its own world frame.
        """
        done = self.flush()
        self._reset_session_state()
        self.session += 1
        if plane is not None:
            self.plane = plane
        return done

    def merge_observation(self, obs: Observation3D) -> tuple[MarkingInstance, bool]:
        r = self.config.merge_radius
        best = None
        best_d = math.inf
        for inst in self._active:
            if inst.label != obs.label:
                continue
            d = math.hypot(*(inst.position - obs.position))
            if d <= r and (d < best_d or (d == best_d and inst.instance_id < best.instance_id)):
                best, best_d = inst, d
        if best is not None:
            best.add(obs)
            self.stats.merged += 1
            return best, False
        inst = MarkingInstance(len(self.instances), obs)
        self.instances.append(inst)
        self._active.append(inst)
        self.stats.instances += 1
        return inst, True

    def assign_track(self, inst: MarkingInstance) -> int:
        """Pick the lane track for a newly created instance.

        A track qualifies when its last instance lies within ``lane_width`` of
        the new one across the direction of travel, and within
        ``track_max_gap`` overall. Lateral offsets are measured from the
        vehicle's path, extrapolated as a circular arc through the recent
        camera positions so that lanes stay separated in curves. Among qualifying tracks the smallest lateral
        offset wins, then the smallest id. If that track already took a new
        instance in this frame, a new track is started instead.
        """
        lateral_of = self._lateral_fn()
        p = inst.position
        lat_new = lateral_of(p)
        best = None
        for tr in self.tracks:
            if tr.last is None:
                continue
            if math.hypot(*(p - tr.last.position)) > self.config.track_max_gap:
                continue
            lateral = abs(lat_new - lateral_of(tr.last.position))
            if lateral <= self.config.lane_width and (best is None or (lateral, tr.track_id) < best):
                best = (lateral, tr.track_id)
        if best is None or best[1] in self._frame_tracks:
            tr = _Track(len(self.tracks))
            self.tracks.append(tr)
            tid = tr.track_id
        else:
            tid = best[1]
        inst.track_id = tid
        return tid

    # -- internals ---------------------------------------------------------

    def _extend_track(self, inst: MarkingInstance, track_id: int) -> None:
        tr = self.tracks[track_id]
        self._frame_tracks.add(track_id)
        keep = []
        for seq in tr.open:
            seq.entries.append(inst)
            if len(seq.entries) == self.k:
                self._pending.append(seq.entries)
            else:
                keep.append(seq)
        keep.append(_OpenSequence(inst))
        tr.open = keep
        tr.last = inst

    def _settle(self, frame_id: int) -> list[MarkingSequence]:
        w = self.config.merge_window
        still = []
        for inst in self._active:
            if frame_id - inst.last_frame > w:
                inst.settled = True
            else:
                still.append(inst)
        self._active = still
        return self._complete_ready()

    def _complete_ready(self) -> list[MarkingSequence]:
        done, waiting = [], []
        for entries in self._pending:
            (done if all(e.settled for e in entries) else waiting).append(entries)
        self._pending = waiting
        out = []
        for entries in done:
            seq = self._freeze(entries)
            self._store.append(seq)
            out.append(seq)
        return out

    def _freeze(self, instances: list[MarkingInstance]) -> MarkingSequence:
        entries = tuple(SequenceEntry.of(i) for i in instances)
        lo = min(e.first_frame for e in entries)
        hi = max(e.last_frame for e in entries)
        return MarkingSequence(
            sequence_id=len(self._store.seqs),
            entries=entries,
            gaps=tuple(_gaps([e.position for e in entries])),
            frame_range=(lo, hi),
            arc_range=(self._arc_before(lo), self._arc_before(hi)),
            session=self.session,
            track_id=instances[0].track_id,
        )

    def _arc_before(self, frame_id: int) -> float:
        a = self._arc_at.get(frame_id)
        if a is not None:
            return a
        # frames without a pose: use the latest earlier one
        known = [f for f in self._arc_at if f <= frame_id]
        return self._arc_at[max(known)] if known else 0.0

    def _update_pose(self, frame_id: int, pose: CameraPose) -> None:
        p = pose.position
        if self._positions:
            step = math.hypot(*(p - self._positions[-1]))
            if step > 0:
                self._arc += step
                self._positions = [self._positions[-1], p]
        else:
            self._positions = [p]
        self._arc_at[frame_id] = self._arc
        if not self._trail or self._arc - self._trail[-1][0] >= TRAIL_STEP:
            self._trail.append((self._arc, p))
            while len(self._trail) > 2 and self._arc - self._trail[1][0] >= TRAIL_LENGTH:
                self._trail.pop(0)
        self._camera_axes = pose.rotation[:, 2], -pose.rotation[:, 1]
        self._fwd = None

    def _curvature(self) -> float:
        """Signed path curvature (1/m, positive turning left) from the pose trail."""
        if len(self._trail) < 3 or self._trail[-1][0] - self._trail[0][0] < TRAIL_LENGTH / 2:
            return 0.0
        a = self._trail[0][1]
        c = self._trail[-1][1]
        mid = (self._trail[0][0] + self._trail[-1][0]) / 2
        b = min(self._trail, key=lambda t: abs(t[0] - mid))[1]
        n = self.plane.normal
        ab, bc, ac = b - a, c - b, c - a
        denom = math.hypot(*ab) * math.hypot(*bc) * math.hypot(*ac)
        if denom < 1e-12:
            return 0.0
        return float(2.0 * np.dot(_cross(ab, bc), n) / denom)

    def _lateral_fn(self):
        """Signed offset (left positive) of a point from the extrapolated path."""
        n = self.plane.normal
        fwd = self._travel_direction()
        left = _cross(n, fwd)
        origin = self._positions[-1] if self._positions else np.zeros(3)
        kappa = self._curvature()
        if abs(kappa) < 1e-6:
            return lambda q: float(np.dot(q - origin, left))
        radius = 1.0 / kappa
        centre = origin + left * radius

        def lateral(q):
            d = q - centre
            d = d - np.dot(d, n) * n
            return math.copysign(1.0, radius) * (abs(radius) - math.hypot(*d))

        return lateral

    def _travel_direction(self) -> np.ndarray:
        if self._fwd is None:
            self._fwd = self._compute_travel_direction()
        return self._fwd

    def _compute_travel_direction(self) -> np.ndarray:
        n = self.plane.normal
        cands = []
        if len(self._positions) == 2:
            cands.append(self._positions[1] - self._positions[0])
        if self._camera_axes is not None:
            # optical axis, then image-up for a camera looking straight down
            cands.extend(self._camera_axes)
        for d in cands:
            d = d - np.dot(d, n) * n
            norm = math.hypot(*d)
            if norm > 1e-9:
                return d / norm
        # any in-plane unit vector
        d = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(d) < 1e-9:
            d = np.cross(n, [0.0, 1.0, 0.0])
        return d / np.linalg.norm(d)
