"""Synthetic driving sessions with ground truth.

A world is a route polyline with painted markings along one or more lanes.
Driving it produces per-frame camera poses and noisy detections, either as
pixel centroids or as ground points, each linked to the marking it came from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .database import SequenceSnapshot
from .errors import InvalidInputError
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Detection,
    Observation3D,
    mount_pose,
    project_point,
)

DEFAULT_LABELS = (
    "straight-arrow",
    "left-arrow",
    "right-arrow",
    "straight-left-arrow",
    "straight-right-arrow",
    "crosswalk",
    "stop-line",
    "speed-limit",
)


def straight_route(length: float) -> tuple[tuple[float, float], ...]:
    return ((0.0, 0.0), (float(length), 0.0))


def rounded_rectangle(width: float, height: float, radius: float, arc_step: float = 2.0):
    """Closed counter-clockwise loop; the first waypoint is repeated at the end."""
    if not 0 < 2 * radius <= min(width, height):
        raise InvalidInputError("corner radius does not fit the rectangle")
    corners = [
        (width - radius, radius, -math.pi / 2),
        (width - radius, height - radius, 0.0),
        (radius, height - radius, math.pi / 2),
        (radius, radius, math.pi),
    ]
    n = max(2, int(math.ceil(radius * math.pi / 2 / arc_step)))
    pts = [(radius, 0.0)]
    for cx, cy, a0 in corners:
        for i in range(n + 1):
            a = a0 + (math.pi / 2) * i / n
            pts.append((cx + radius * math.cos(a), cy + radius * math.sin(a)))
    pts.append((radius, 0.0))
    return tuple(pts)


@dataclass(frozen=True)
class WorldSpec:
    """Layout of a synthetic world.

    ``loop_segments`` holds (start, end, revisit) triples in route arc length:
    on reaching ``revisit`` the vehicle drives ``start..end`` once more, then
    carries on from ``revisit``. On a closed route (start, end) = (0, L) with
    revisit L is simply a second lap.
    """

    seed: int = 0
    route: tuple[tuple[float, float], ...] = field(default_factory=lambda: rounded_rectangle(600.0, 300.0, 120.0))
    lanes: int = 1
    lane_spacing: float = 3.5
    marking_spacing_mean: float = 15.0
    marking_spacing_jitter: float = 5.0
    label_alphabet: tuple[str, ...] = DEFAULT_LABELS
    loop_segments: tuple[tuple[float, float, float], ...] = ()
    lead_in: float = 30.0  # no markings before this arc length
    frame_step: float = 1.0  # metres driven per frame
    fps: float = 10.0
    min_marking_spacing: float = 3.0

    def __post_init__(self):
        route = tuple((float(x), float(y)) for x, y in self.route)
        object.__setattr__(self, "route", route)
        object.__setattr__(self, "label_alphabet", tuple(self.label_alphabet))
        object.__setattr__(self, "loop_segments", tuple(tuple(float(v) for v in s) for s in self.loop_segments))
        if len(route) < 2:
            raise InvalidInputError("route needs at least two waypoints")
        if self.lanes < 1 or self.lane_spacing <= 0:
            raise InvalidInputError("need at least one lane with positive spacing")
        if not self.marking_spacing_mean > self.min_marking_spacing:
            raise InvalidInputError("marking spacing mean must exceed min_marking_spacing (2x merge radius)")
        if not 0 <= self.marking_spacing_jitter < self.marking_spacing_mean:
            raise InvalidInputError("spacing jitter must be in [0, mean)")
        if not self.label_alphabet:
            raise InvalidInputError("empty label alphabet")
        if self.frame_step <= 0 or self.fps <= 0:
            raise InvalidInputError("frame_step and fps must be positive")
        length = _polyline_length(route)
        slack = 1e-9 * max(1.0, length)  # arc lengths summed in a different order
        for seg in self.loop_segments:
            if len(seg) != 3:
                raise InvalidInputError("loop segments are (start, end, revisit) triples")
            s, e, r = seg
            if not (0 <= s < e <= length + slack and 0 <= r <= length + slack):
                raise InvalidInputError(f"loop segment {seg} outside route bounds [0, {length:.3f}]")


@dataclass(frozen=True)
class NoiseSpec:
    """Detector imperfections.

    With ``scope="pass"`` (default) misses and label flips are drawn once per
    visit of a marking, so an occluded or misread marking stays that way
    while it is in view. ``scope="frame"`` draws them independently per frame.
    Position noise is always per frame.
    """

    position_sigma: float = 0.0
    miss_prob: float = 0.0
    label_flip_prob: float = 0.0
    clutter_rate: float = 0.0
    seed: int = 0
    scope: str = "pass"

    def __post_init__(self):
        for name in ("miss_prob", "label_flip_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must be in [0, 1]")
        if self.position_sigma < 0 or self.clutter_rate < 0:
            raise InvalidInputError("position_sigma and clutter_rate must be >= 0")
        if self.scope not in ("pass", "frame"):
            raise InvalidInputError("scope must be 'pass' or 'frame'")


@dataclass(frozen=True)
class CameraRig:
    """Forward-facing camera on the car plus its ground field of view."""

    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(500.0, 500.0, 640.0, 256.0, 1280, 512))
    height: float = 1.5
    pitch: float = math.radians(8.0)
    view_near: float = 4.0
    view_far: float = 25.0
    view_lanes: float = 1.5  # half-width of the visible band, in lanes


@dataclass
class World:
    spec: WorldSpec
    route_xy: np.ndarray  # (R, 2)
    route_s: np.ndarray  # (R,) cumulative arc length
    marking_ids: np.ndarray  # (M,)
    marking_labels: list[str]
    marking_lane: np.ndarray
    marking_s: np.ndarray
    marking_pos: np.ndarray  # (M, 3)
    drive: list[tuple[float, float]]  # driven route intervals, in order
    frame_s: np.ndarray  # route arc of every frame
    frame_xy: np.ndarray
    frame_heading: np.ndarray
    frame_odometer: np.ndarray  # driven distance, jumps between intervals excluded

    @property
    def length(self) -> float:
        return float(self.route_s[-1])

    @property
    def closed(self) -> bool:
        return bool(np.allclose(self.route_xy[0], self.route_xy[-1]))

    @property
    def trajectory_length(self) -> float:
        return sum(b - a for a, b in self.drive)

    def label_of(self, marking_id: int) -> str:
        return self.marking_labels[marking_id]


def _polyline_length(pts) -> float:
    p = np.asarray(pts, dtype=float)
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


def _route_point(world_xy, route_s, s):
    """Position and unit tangent at arc lengths ``s`` (vectorized)."""
    s = np.clip(np.atleast_1d(np.asarray(s, dtype=float)), 0.0, route_s[-1])
    seg = np.clip(np.searchsorted(route_s, s, side="right") - 1, 0, len(route_s) - 2)
    p0, p1 = world_xy[seg], world_xy[seg + 1]
    ds = (route_s[seg + 1] - route_s[seg])[:, None]
    t = ((s - route_s[seg])[:, None]) / np.where(ds > 0, ds, 1.0)
    tangent = (p1 - p0) / np.where(ds > 0, ds, 1.0)
    return p0 + t * (p1 - p0), tangent


def generate_world(spec: WorldSpec) -> World:
    rng = np.random.default_rng(spec.seed)
    xy = np.asarray(spec.route, dtype=float)
    route_s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
    length = float(route_s[-1])
    closed = bool(np.allclose(xy[0], xy[-1]))

    ids, labels, lanes, ss, pos = [], [], [], [], []
    # on a closed route leave room so the last marking is not on top of the first
    end = length - (spec.lead_in + spec.min_marking_spacing if closed else 0.0)
    for lane in range(spec.lanes):
        s = spec.lead_in
        while s <= end + 1e-9:
            ss.append(s)
            lanes.append(lane)
            labels.append(spec.label_alphabet[int(rng.integers(len(spec.label_alphabet)))])
            gap = spec.marking_spacing_mean
            if spec.marking_spacing_jitter > 0:
                gap += rng.uniform(-spec.marking_spacing_jitter, spec.marking_spacing_jitter)
            s += max(gap, spec.min_marking_spacing)
    ss = np.asarray(ss, dtype=float)
    lanes = np.asarray(lanes, dtype=np.int64)
    if len(ss):
        p, tan = _route_point(xy, route_s, ss)
        left = np.stack([-tan[:, 1], tan[:, 0]], axis=1)
        p = p + left * (lanes * spec.lane_spacing)[:, None]
        pos = np.column_stack([p, np.zeros(len(ss))])
    else:
        pos = np.zeros((0, 3))
    ids = np.arange(len(ss), dtype=np.int64)

    drive = []
    cursor = 0.0
    for start, stop, revisit in sorted(spec.loop_segments, key=lambda t: t[2]):
        drive.append((cursor, revisit))
        drive.append((start, stop))
        cursor = revisit
    drive.append((cursor, length))
    drive = [(a, b) for a, b in drive if b > a]

    frame_s, odo = [], []
    driven = 0.0
    for a, b in drive:
        n = int(math.floor((b - a) / spec.frame_step + 1e-9))
        s = a + spec.frame_step * np.arange(n + 1)
        frame_s.append(s)
        odo.append(driven + (s - a))
        driven += b - a
    frame_s = np.concatenate(frame_s) if frame_s else np.zeros(0)
    odo = np.concatenate(odo) if odo else np.zeros(0)
    fxy, ftan = _route_point(xy, route_s, frame_s)
    heading = np.arctan2(ftan[:, 1], ftan[:, 0])

    return World(
        spec=spec,
        route_xy=xy,
        route_s=route_s,
        marking_ids=ids,
        marking_labels=labels,
        marking_lane=lanes,
        marking_s=ss,
        marking_pos=pos,
        drive=drive,
        frame_s=frame_s,
        frame_xy=fxy,
        frame_heading=heading,
        frame_odometer=odo,
    )


@dataclass
class SessionLog:
    """Everything one simulated drive produces.

    ``detections`` holds :class:`Detection` records in pixel mode and
    :class:`Observation3D` records in direct-3D mode; ``truth_id`` on each
    links it to a marking, None for clutter.
    """

    frame_ids: list[int]
    timestamps: list[float]
    poses: list[CameraPose]
    detections: list
    truth: list[tuple[int, str, tuple[float, float, float], int]]  # (id, label, position, lane)
    visibility: dict[int, tuple[int, ...]]
    rig: CameraRig
    direct: bool = False

    def frames(self):
        """Yield (frame_id, pose, detections) in frame order, empty frames included."""
        by_frame: dict[int, list] = {}
        for d in self.detections:
            by_frame.setdefault(d.frame_id, []).append(d)
        for f, pose in zip(self.frame_ids, self.poses):
            yield f, pose, by_frame.get(f, [])


def simulate_drive(
    world: World,
    noise: NoiseSpec | None = None,
    rig: CameraRig | None = None,
    direct: bool = False,
) -> SessionLog:
    """Drive the world once and record detections.

    Args:
        world: output of :func:`generate_world`.
        noise: detector noise; zero noise if omitted.
        rig: camera model and visible ground region.
        direct: emit ground-plane observations instead of pixel centroids.
    """
    noise = noise or NoiseSpec()
    rig = rig or CameraRig()
    spec = world.spec
    rng = np.random.default_rng([spec.seed, noise.seed, 0x5EED])
    intr = rig.intrinsics
    half_width = rig.view_lanes * spec.lane_spacing
    alphabet = spec.label_alphabet

    poses, stamps, frame_ids, dets = [], [], [], []
    visibility: dict[int, tuple[int, ...]] = {}
    pass_state: dict[int, tuple[bool, str]] = {}  # marking -> (missed, label) for the current visit
    prev_visible: set[int] = set()

    mp = world.marking_pos
    # markings sorted by x bound the per-frame visibility test
    x_order = np.argsort(mp[:, 0], kind="stable")
    x_sorted = mp[x_order, 0]
    reach = math.hypot(rig.view_far, half_width)
    for f in range(len(world.frame_s)):
        cxy = world.frame_xy[f]
        h = float(world.frame_heading[f])
        fwd = np.array([math.cos(h), math.sin(h)])
        left = np.array([-fwd[1], fwd[0]])
        pose = mount_pose(cxy, h, rig.height, rig.pitch)
        poses.append(pose)
        frame_ids.append(f)
        t = f / spec.fps
        stamps.append(t)

        lo, hi = np.searchsorted(x_sorted, (cxy[0] - reach, cxy[0] + reach))
        near = x_order[lo:hi]
        rel = mp[near, :2] - cxy
        along = rel @ fwd
        across = rel @ left
        keep = np.flatnonzero((along >= rig.view_near) & (along <= rig.view_far) & (np.abs(across) <= half_width))
        # ties in range are broken by marking id
        vis = near[keep][np.lexsort((near[keep], along[keep]))]
        visibility[f] = tuple(int(m) for m in vis)

        now_visible = set(visibility[f])
        for m in prev_visible - now_visible:
            pass_state.pop(m, None)
        prev_visible = now_visible

        frame_dets = []
        for m in visibility[f]:
            true_label = world.marking_labels[m]
            if noise.scope == "frame" or m not in pass_state:
                missed = bool(rng.random() < noise.miss_prob)
                label = true_label
                if rng.random() < noise.label_flip_prob and len(alphabet) > 1:
                    others = [a for a in alphabet if a != true_label]
                    label = others[int(rng.integers(len(others)))]
                pass_state[m] = (missed, label)
            missed, label = pass_state[m]
            p = mp[m].copy()
            if noise.position_sigma > 0:
                p[:2] += rng.normal(0.0, noise.position_sigma, size=2)
            if missed:
                continue
            frame_dets.append((label, p, int(m)))

        if noise.clutter_rate > 0:
            for _ in range(int(rng.poisson(noise.clutter_rate))):
                a = rng.uniform(rig.view_near, rig.view_far)
                c = rng.uniform(-half_width, half_width)
                xy = cxy + a * fwd + c * left
                label = alphabet[int(rng.integers(len(alphabet)))]
                frame_dets.append((label, np.array([xy[0], xy[1], 0.0]), None))

        for label, p, truth in frame_dets:
            if direct:
                dets.append(Observation3D(f, label, p, truth))
                continue
            uv = project_point(intr, pose, p)
            if uv is None or not intr.contains(*uv):
                continue
            dets.append(Detection(f, t, label, (float(uv[0]), float(uv[1])), truth))

    truth = [
        (int(i), world.marking_labels[i], tuple(float(c) for c in world.marking_pos[i]), int(world.marking_lane[i]))
        for i in world.marking_ids
    ]
    return SessionLog(frame_ids, stamps, poses, dets, truth, visibility, rig, direct)


def ground_truth_pairs(snapshot: SequenceSnapshot, cfg=None, mode=None) -> set[tuple[int, int]]:
    """Sequence pairs covering the same ordered tuple of physical markings.

    Sequences with a clutter entry are never part of a true pair. When
    ``cfg`` and ``mode`` are given, pairs the matcher could never report
    (inadmissible in that mode) are left out.
    """
    from .matcher import admissible_pair

    groups: dict[tuple, list[int]] = {}
    for s in snapshot.sequences:
        key = s.truth_ids
        if any(t is None for t in key):
            continue
        groups.setdefault(key, []).append(s.sequence_id)
    out = set()
    for ids in groups.values():
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                if mode is not None and not admissible_pair(snapshot[a], snapshot[b], cfg, mode):
                    continue
                out.add((a, b))
    return out
