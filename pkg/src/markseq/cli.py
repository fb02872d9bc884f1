"""Command-line entry point: ``markseq simulate|ingest|match|sweep|bench``.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Diagnostics go to stderr; nothing is printed to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, kernels
from . import io as fmt
from .database import EngineConfig, SequenceDatabase, SequenceSnapshot
from .errors import InvalidInputError
from .evaluation import bench_query, build_database, latency_to_csv, sweep_k, sweep_to_csv
from .matcher import Mode, batch_match, incremental_match, indexed_match
from .simulator import CameraRig, NoiseSpec, SessionLog, WorldSpec, generate_world, simulate_drive

logger = logging.getLogger("markseq")


class CliError(Exception):
    pass


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return t.isoformat(timespec="seconds")


def _write_manifest(out: Path, args, inputs, started: str, **extra) -> None:
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "config": str(args.config) if getattr(args, "config", None) else None,
        "inputs": [str(p) for p in inputs],
        "output_dir": str(out),
        "mode": getattr(args, "mode", None),
        "seed": getattr(args, "seed", None),
        "engine_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "started_at": started,
        "finished_at": _timestamp(),
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _engine_overrides(args, cfg: EngineConfig) -> EngineConfig:
    changes = {}
    for name in ("k", "epsilon", "merge_radius", "lane_width", "min_separation_frames", "min_separation_distance"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    return cfg.replace(**changes) if changes else cfg


def _load_config(args, near: Path | None = None):
    path = args.config
    if path is None and near is not None:
        for cand in (near / "engine.cfg", near.parent / "engine.cfg"):
            if cand.exists():
                path = cand
                break
    if path is None:
        cfg, intr, plane = EngineConfig(), None, None
    else:
        args.config = path
        cfg, intr, plane = fmt.read_config(path)
    return _engine_overrides(args, cfg), intr, plane


def load_session(poses_path, detections_path=None, observations_path=None, skip_bad=False) -> tuple[SessionLog, int]:
    """Read one session's pose and detection files."""
    poses, skipped = fmt.read_poses(poses_path, skip_bad)
    if detections_path is not None:
        dets, s2 = fmt.read_detections(detections_path, skip_bad)
    elif observations_path is not None:
        dets, s2 = fmt.read_observations(observations_path, skip_bad)
    else:
        dets, s2 = [], 0
    frame_ids = [f for f, _, _ in poses]
    if any(b < a for a, b in zip(frame_ids, frame_ids[1:])):
        raise InvalidInputError(f"{poses_path}: frames are not in increasing order")
    known = set(frame_ids)
    orphans = sorted({d.frame_id for d in dets} - known)
    if orphans:
        raise InvalidInputError(f"detections reference frames without a pose, e.g. {orphans[:5]}")
    log = SessionLog(
        frame_ids=frame_ids,
        timestamps=[t for _, t, _ in poses],
        poses=[p for _, _, p in poses],
        detections=dets,
        truth=[],
        visibility={},
        rig=None,
        direct=detections_path is None,
    )
    return log, skipped + s2


def load_session_dir(path, skip_bad=False) -> tuple[SessionLog, int]:
    d = Path(path)
    if not d.is_dir():
        raise InvalidInputError(f"{d}: not a session directory")
    det = d / "detections.jsonl"
    obs = d / "observations.jsonl"
    return load_session(
        d / "poses.jsonl",
        det if det.exists() else None,
        obs if not det.exists() and obs.exists() else None,
        skip_bad,
    )


# -- subcommands --------------------------------------------------------------


def cmd_simulate(args) -> None:
    started = _timestamp()
    out = _outdir(args.out)
    spec_kwargs = {}
    if args.world:
        try:
            spec_kwargs = json.loads(Path(args.world).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read world spec {args.world}: {exc}") from None
        known = {f.name for f in fields(WorldSpec)}
        unknown = set(spec_kwargs) - known
        if unknown:
            raise CliError(f"unknown world spec keys: {sorted(unknown)}")
    spec_kwargs["seed"] = args.seed
    if args.lanes is not None:
        spec_kwargs["lanes"] = args.lanes
    if args.laps is None:
        spec = WorldSpec(**spec_kwargs)
    else:
        if args.laps < 1:
            raise CliError("--laps must be >= 1")
        length = generate_world(WorldSpec(**{**spec_kwargs, "loop_segments": ()})).length
        spec = WorldSpec(**{**spec_kwargs, "loop_segments": tuple((0.0, length, length) for _ in range(args.laps - 1))})
    world = generate_world(spec)
    rig = CameraRig()
    fmt.write_config(out / "engine.cfg", EngineConfig(), rig.intrinsics)
    (out / "world.json").write_text(json.dumps(asdict(spec), indent=2) + "\n", encoding="utf-8")
    fmt.write_truth_csv(out / "truth.csv", [
        (int(i), world.marking_labels[i], tuple(float(c) for c in world.marking_pos[i]), int(world.marking_lane[i]))
        for i in world.marking_ids
    ])
    written = []
    for i in range(args.sessions):
        noise = NoiseSpec(args.position_sigma, args.miss_prob, args.flip_prob, args.clutter_rate,
                          seed=args.seed * 1000 + i, scope=args.noise_scope)
        log = simulate_drive(world, noise, rig, direct=args.direct)
        sdir = _outdir(out / f"session_{i}")
        fmt.write_poses(sdir / "poses.jsonl", log.frame_ids, log.timestamps, log.poses)
        name = "observations.jsonl" if args.direct else "detections.jsonl"
        fmt.write_detections(sdir / name, log.detections)
        fmt._write_lines(sdir / "visibility.jsonl",
                         (fmt._dump({"frame": f, "visible": list(v)}) for f, v in sorted(log.visibility.items())))
        written.append(str(sdir))
    _write_manifest(out, args, [args.world] if args.world else [], started, sessions=written,
                    markings=len(world.marking_ids), frames=len(world.frame_s))


def cmd_ingest(args) -> None:
    started = _timestamp()
    out = _outdir(args.out)
    cfg, intr, plane = _load_config(args)
    log, skipped = load_session(args.poses, args.detections, args.observations, args.skip_bad_records)
    if not log.direct and log.detections and intr is None:
        raise CliError("pixel detections need camera intrinsics (fx, fy, cx, cy, width, height) in --config")
    db = SequenceDatabase(cfg, intr, plane)
    completed = []
    for f, pose, dets in log.frames():
        for s in db.ingest_frame(dets, pose, f):
            completed.append((f, s.sequence_id))
    last = log.frame_ids[-1] if log.frame_ids else None
    completed += [(last, s.sequence_id) for s in db.flush()]
    snap = db.snapshot()
    fmt.write_database(out / "database.jsonl", snap)
    fmt._write_lines(out / "completed.jsonl", (fmt._dump({"frame": f, "sequence_id": i}) for f, i in completed))
    inputs = [p for p in (args.poses, args.detections, args.observations) if p]
    _write_manifest(out, args, inputs, started, stats=asdict(db.stats), skipped_records=skipped,
                    sequences=len(snap))


def _match_inputs(args):
    """Snapshot plus config for ``match``/``sweep`` from sessions or database files."""
    if args.db:
        seqs, cfg = [], None
        for session, path in enumerate(args.db):
            c, loaded, nsess = fmt.read_database(path)
            if cfg is not None and c.k != cfg.k:
                raise CliError("database files were built with different k")
            cfg = c if cfg is None else cfg
            offset = len(seqs)
            base = session if len(args.db) > 1 else 0
            for s in loaded:
                seqs.append(type(s)(s.sequence_id + offset, s.entries, s.gaps, s.frame_range, s.arc_range,
                                    s.session + base, s.track_id))
        if args.k is not None and args.k != cfg.k:
            raise CliError(f"database was built with k={cfg.k}; rebuild it to match with k={args.k}")
        cfg = _engine_overrides(args, cfg)
        return SequenceSnapshot.from_sequences(seqs, cfg), cfg
    logs = [load_session_dir(p, args.skip_bad_records)[0] for p in args.session]
    cfg, intr, plane = _load_config(args, Path(args.session[0]))
    return build_database(logs, cfg, intr, plane).snapshot(), cfg


def cmd_match(args) -> None:
    started = _timestamp()
    out = _outdir(args.out)
    mode = Mode.parse(args.mode)
    snap, cfg = _match_inputs(args)
    if args.algorithm == "batch":
        report = batch_match(snap, cfg, mode)
    elif args.algorithm == "indexed":
        report = indexed_match(snap, cfg, mode)
    else:
        report = incremental_match(snap, snap.sequences, cfg, mode, indexed=True)
    fmt.write_report_jsonl(out / "candidates.jsonl", report, snap)
    fmt.write_report_csv(out / "candidates.csv", report, snap)
    _write_manifest(out, args, (args.db or []) + (args.session or []), started,
                    k=cfg.k, epsilon=cfg.epsilon, algorithm=args.algorithm,
                    sequences=len(snap), candidates=len(report),
                    comparisons_performed=report.comparisons_performed)


def _parse_k_range(text: str) -> list[int]:
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            ks = list(range(lo, hi + 1))
        else:
            ks = [int(v) for v in text.split(",")]
    except ValueError:
        raise CliError(f"bad --k range {text!r}, expected LO:HI or a comma list") from None
    if not ks:
        raise CliError(f"empty --k range {text!r}")
    return ks


def cmd_sweep(args) -> None:
    started = _timestamp()
    out = _outdir(args.out)
    ks = _parse_k_range(args.k_range)
    logs = [load_session_dir(p, args.skip_bad_records)[0] for p in args.session]
    cfg, intr, plane = _load_config(args, Path(args.session[0]))
    rows = sweep_k(logs, ks, cfg, args.mode, intr, plane)
    (out / "sweep.csv").write_text(sweep_to_csv(rows), encoding="utf-8")
    _write_manifest(out, args, args.session, started, k_range=ks, epsilon=cfg.epsilon)


def cmd_bench(args) -> None:
    started = _timestamp()
    out = _outdir(args.out)
    try:
        sizes = [int(v) for v in args.sizes.split(",")]
    except ValueError:
        raise CliError(f"bad --sizes {args.sizes!r}") from None
    cfg = _engine_overrides(args, EngineConfig())
    paths = [p.strip() for p in args.paths.split(",")]
    if set(paths) - {"indexed", "brute"}:
        raise CliError("--paths takes indexed and/or brute")
    reports = bench_query(sizes, cfg, args.inquiries, paths, seed=args.seed, backend=args.backend)
    (out / "latency.csv").write_text(latency_to_csv(reports), encoding="utf-8")
    _write_manifest(out, args, [], started, sizes=sizes, k=cfg.k)


# -- parser -------------------------------------------------------------------


def _engine_flags(p, k=True):
    if k:
        p.add_argument("--k", type=int, help="search window size (markings per sequence)")
    p.add_argument("--epsilon", type=float, help="per-gap distance tolerance in metres")
    p.add_argument("--min-separation-frames", dest="min_separation_frames", type=int,
                   help="loop mode: minimum frame gap between matched sequences")
    p.add_argument("--min-separation-distance", dest="min_separation_distance", type=float,
                   help="loop mode: minimum driven distance (m) between matched sequences")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markseq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic session logs")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="world and noise seed")
    p.add_argument("--world", help="JSON file with WorldSpec fields")
    p.add_argument("--lanes", type=int, help="number of lanes")
    p.add_argument("--laps", type=int, help="laps of the (closed) route per session")
    p.add_argument("--sessions", type=int, default=1, help="independent drives of the same world")
    p.add_argument("--direct", action="store_true", help="write ground observations instead of pixel detections")
    p.add_argument("--position-sigma", type=float, default=0.0, help="ground position noise (m)")
    p.add_argument("--miss-prob", type=float, default=0.0, help="probability a marking is missed")
    p.add_argument("--flip-prob", type=float, default=0.0, help="probability a marking is misclassified")
    p.add_argument("--clutter-rate", type=float, default=0.0, help="spurious detections per frame")
    p.add_argument("--noise-scope", choices=("pass", "frame"), default="pass",
                   help="draw misses/flips once per marking visit or per frame")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="build a sequence database from poses and detections")
    p.add_argument("--config", help="key=value engine config (camera, plane, k, ...)")
    p.add_argument("--poses", required=True, help="poses JSONL")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--detections", help="pixel detections JSONL")
    g.add_argument("--observations", help="ground-plane observations JSONL")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--skip-bad-records", action="store_true", help="skip malformed lines instead of failing")
    _engine_flags(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("match", help="find matching sequence pairs")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--db", action="append", help="database file from `ingest` (give twice for two sessions)")
    g.add_argument("--session", action="append", help="session directory (give twice for place mode)")
    p.add_argument("--config", help="engine config; defaults to engine.cfg next to the session")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="loop")
    p.add_argument("--algorithm", choices=("indexed", "batch", "incremental"), default="indexed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--skip-bad-records", action="store_true", help="skip malformed lines instead of failing")
    _engine_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("sweep", help="score matching over a range of window sizes")
    p.add_argument("--session", action="append", required=True, help="simulated session directory (twice for place mode)")
    p.add_argument("--config", help="engine config; defaults to engine.cfg next to the session")
    p.add_argument("--k", dest="k_range", default="2:6", help="window sizes, LO:HI inclusive or a comma list")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="loop")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--skip-bad-records", action="store_true", help="skip malformed lines instead of failing")
    _engine_flags(p, k=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="time place-recognition inquiries")
    p.add_argument("--sizes", default="0,1000,10000", help="comma list of database sizes N")
    p.add_argument("--inquiries", type=int, default=200, help="inquiries per size and path")
    p.add_argument("--paths", default="indexed,brute", help="indexed and/or brute")
    p.add_argument("--backend", choices=kernels.available(), help="kernel backend (default: selected at import)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    _engine_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (CliError, InvalidInputError, OSError) as exc:
        print(f"markseq {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
