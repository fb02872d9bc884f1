"""File formats.

Inputs are JSON-lines, one record per line:

    poses         {"frame": 0, "t": 0.0, "p": [x, y, z], "q": [w, x, y, z]}
    detections    {"frame": 0, "t": 0.0, "label": "crosswalk", "u": 640.0, "v": 300.0}
    observations  {"frame": 0, "label": "crosswalk", "x": 1.0, "y": 2.0, "z": 0.0}

Detections and observations may carry a ``truth`` marking id (simulator
output; null for clutter). Any of these files may start with a header line
``{"schema": "markseq/1"}``; a different schema string is rejected.

The engine config is a flat ``key = value`` text file, ``#`` starts a comment.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, fields
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .database import EngineConfig, MarkingSequence, SequenceEntry, SequenceSnapshot
from .errors import InvalidInputError, RecordError, SchemaVersionError
from .geometry import CameraIntrinsics, CameraPose, Detection, GroundPlane, Observation3D, canonical_label

logger = logging.getLogger(__name__)

SCHEMA = "markseq/1"
DB_SCHEMA = "markseq.db/1"

_INTRINSIC_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), sort_keys=False)


def _read_jsonl(path, parse: Callable[[dict], object], skip_bad: bool = False, schema: str = SCHEMA):
    """Parse a JSONL file record by record.

    Returns the parsed records and the number of skipped lines.
    """
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"{path}: no such file")
    out, skipped = [], 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record is not a JSON object")
                if "schema" in rec:
                    if rec["schema"] != schema:
                        raise SchemaVersionError(f"{path}:{lineno}: schema {rec['schema']!r}, expected {schema!r}")
                    continue
                out.append(parse(rec))
            except SchemaVersionError:
                raise
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                if not skip_bad:
                    raise RecordError(path, lineno, f"malformed record: {exc}") from None
                logger.warning("%s:%d: skipped malformed record (%s)", path, lineno, exc)
                skipped += 1
    return out, skipped


def _int(v) -> int:
    if isinstance(v, bool) or int(v) != v:
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _vec(v, n) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (n,) or not np.all(np.isfinite(a)):
        raise ValueError(f"expected {n} finite numbers, got {v!r}")
    return a


def _truth(rec) -> int | None:
    t = rec.get("truth")
    return None if t is None else _int(t)


def parse_pose(rec) -> tuple[int, float, CameraPose]:
    return _int(rec["frame"]), float(rec["t"]), CameraPose(_vec(rec["p"], 3), _vec(rec["q"], 4))


def parse_detection(rec) -> Detection:
    return Detection(
        _int(rec["frame"]), float(rec["t"]), canonical_label(rec["label"]),
        (float(rec["u"]), float(rec["v"])), _truth(rec),
    )


def parse_observation(rec) -> Observation3D:
    p = np.array([float(rec["x"]), float(rec["y"]), float(rec["z"])])
    return Observation3D(_int(rec["frame"]), canonical_label(rec["label"]), p, _truth(rec))


def read_poses(path, skip_bad=False):
    return _read_jsonl(path, parse_pose, skip_bad)


def read_detections(path, skip_bad=False):
    return _read_jsonl(path, parse_detection, skip_bad)


def read_observations(path, skip_bad=False):
    return _read_jsonl(path, parse_observation, skip_bad)


def _write_lines(path, lines: Iterable[str]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")


def write_poses(path, frame_ids, timestamps, poses) -> None:
    _write_lines(path, (
        _dump({"frame": f, "t": t, "p": p.position.tolist(), "q": p.orientation.tolist()})
        for f, t, p in zip(frame_ids, timestamps, poses)
    ))


def detection_record(d: Detection | Observation3D) -> dict:
    if isinstance(d, Observation3D):
        rec = {"frame": d.frame_id, "label": d.label,
               "x": float(d.position[0]), "y": float(d.position[1]), "z": float(d.position[2])}
    else:
        rec = {"frame": d.frame_id, "t": d.timestamp, "label": d.label, "u": d.centroid[0], "v": d.centroid[1]}
    rec["truth"] = d.truth_id
    return rec


def write_detections(path, detections) -> None:
    _write_lines(path, (_dump(detection_record(d)) for d in detections))


# -- engine config -----------------------------------------------------------


def read_config(path) -> tuple[EngineConfig, CameraIntrinsics | None, GroundPlane]:
    """Parse a key=value config into engine, camera and road-plane settings."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"{path}: no such file")
    engine_keys = {f.name: f.type for f in fields(EngineConfig)}
    engine, intr, plane = {}, {}, {}
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise RecordError(path, lineno, "expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key == "schema":
                    if value != SCHEMA:
                        raise SchemaVersionError(f"{path}:{lineno}: schema {value!r}, expected {SCHEMA!r}")
                elif key in engine_keys:
                    engine[key] = int(value) if engine_keys[key] == "int" else float(value)
                elif key in _INTRINSIC_KEYS:
                    intr[key] = int(value) if key in ("width", "height") else float(value)
                elif key == "plane_normal":
                    plane["normal"] = _vec([float(v) for v in value.split(",")], 3)
                elif key == "plane_offset":
                    plane["offset"] = float(value)
                else:
                    raise RecordError(path, lineno, f"unknown key {key!r}")
            except ValueError as exc:
                if isinstance(exc, (RecordError, SchemaVersionError)):
                    raise
                raise RecordError(path, lineno, f"bad value for {key}: {exc}") from None
    if intr and set(intr) != set(_INTRINSIC_KEYS):
        raise InvalidInputError(f"{path}: camera needs all of {', '.join(_INTRINSIC_KEYS)}")
    return (
        EngineConfig(**engine),
        CameraIntrinsics(**intr) if intr else None,
        GroundPlane(**plane),
    )


def write_config(path, cfg: EngineConfig, intrinsics: CameraIntrinsics | None = None, plane: GroundPlane | None = None) -> None:
    lines = [f"schema = {SCHEMA}"]
    lines += [f"{k} = {v}" for k, v in asdict(cfg).items()]
    if intrinsics is not None:
        lines += [f"{k} = {getattr(intrinsics, k)}" for k in _INTRINSIC_KEYS]
    plane = plane or GroundPlane()
    lines.append("plane_normal = " + ",".join(repr(float(c)) for c in plane.normal))
    lines.append(f"plane_offset = {plane.offset!r}")
    _write_lines(path, lines)


# -- database ----------------------------------------------------------------


def sequence_record(s: MarkingSequence) -> dict:
    return {
        "id": s.sequence_id,
        "session": s.session,
        "track": s.track_id,
        "frames": list(s.frame_range),
        "arc": list(s.arc_range),
        "gaps": list(s.gaps),
        "entries": [
            {"instance": e.instance_id, "label": e.label, "p": list(e.position),
             "first_frame": e.first_frame, "last_frame": e.last_frame, "truth": e.truth_id}
            for e in s.entries
        ],
    }


def parse_sequence(rec) -> MarkingSequence:
    entries = tuple(
        SequenceEntry(
            _int(e["instance"]), canonical_label(e["label"]), tuple(float(c) for c in _vec(e["p"], 3)),
            _int(e["first_frame"]), _int(e["last_frame"]), _truth(e),
        )
        for e in rec["entries"]
    )
    gaps = tuple(float(g) for g in rec["gaps"])
    if len(gaps) != len(entries) - 1:
        raise ValueError("gap count does not match entry count")
    return MarkingSequence(
        _int(rec["id"]), entries, gaps,
        (_int(rec["frames"][0]), _int(rec["frames"][1])),
        (float(rec["arc"][0]), float(rec["arc"][1])),
        _int(rec.get("session", 0)), _int(rec.get("track", 0)),
    )


def write_database(path, snapshot: SequenceSnapshot, sessions: int = 1) -> None:
    header = {"schema": DB_SCHEMA, "config": asdict(snapshot.config), "sessions": sessions, "count": len(snapshot)}
    _write_lines(path, [_dump(header)] + [_dump(sequence_record(s)) for s in snapshot.sequences])


def read_database(path) -> tuple[EngineConfig, list[MarkingSequence], int]:
    """Load a database file; returns (config, sequences, session count)."""
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"{path}: no such file")
    with path.open(encoding="utf-8") as fh:
        first = fh.readline()
    try:
        header = json.loads(first)
    except ValueError:
        raise RecordError(path, 1, "missing database header") from None
    if not isinstance(header, dict) or header.get("schema") != DB_SCHEMA:
        got = header.get("schema") if isinstance(header, dict) else None
        raise SchemaVersionError(f"{path}:1: schema {got!r}, expected {DB_SCHEMA!r}")
    try:
        cfg = EngineConfig(**header["config"])
    except (TypeError, KeyError) as exc:
        raise RecordError(path, 1, f"bad config in header: {exc}") from None
    seqs, _ = _read_jsonl(path, parse_sequence, schema=DB_SCHEMA)
    if len(seqs) != header.get("count", len(seqs)):
        raise InvalidInputError(f"{path}: header announces {header['count']} sequences, found {len(seqs)}")
    return cfg, seqs, int(header.get("sessions", 1))


# -- reports -----------------------------------------------------------------


def write_report_jsonl(path, report, snapshot: SequenceSnapshot | None = None) -> None:
    def rec(c):
        r = {"seq_a": c.seq_a, "seq_b": c.seq_b, "max_residual": c.max_residual,
             "residuals": list(c.residuals), "labels": list(c.label_signature)}
        if snapshot is not None:
            r["frames_a"] = list(snapshot[c.seq_a].frame_range)
            r["frames_b"] = list(snapshot[c.seq_b].frame_range)
        return _dump(r)

    _write_lines(path, (rec(c) for c in report.candidates))


def report_csv_header(k: int) -> list[str]:
    return (["seq_a", "seq_b", "max_residual"] + [f"residual_{i}" for i in range(k - 1)]
            + ["a_frame_start", "a_frame_end", "b_frame_start", "b_frame_end"])


def write_report_csv(path, report, snapshot: SequenceSnapshot) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report_csv_header(snapshot.k))
        for c in report.candidates:
            a, b = snapshot[c.seq_a], snapshot[c.seq_b]
            w.writerow([c.seq_a, c.seq_b, repr(c.max_residual), *map(repr, c.residuals),
                        *a.frame_range, *b.frame_range])


def write_truth_csv(path, truth) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "x", "y", "z", "lane"])
        for mid, label, pos, lane in truth:
            w.writerow([mid, label, *map(repr, pos), lane])


def read_truth_csv(path):
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["id"]), r["label"], (float(r["x"]), float(r["y"]), float(r["z"])), int(r["lane"])) for r in rows]
