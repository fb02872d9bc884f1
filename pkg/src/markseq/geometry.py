"""Lifting detection centroids onto the road plane.

Conventions:
    World frame is z-up; the default road plane is z = 0.
    Camera frame is the usual computer-vision one: x right, y down, z along
    the optical axis. Poses are world-from-camera, quaternions are (w, x, y, z).
    Images are assumed rectified, so there is no distortion model.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

PARALLEL_EPS = 1e-12

_LABEL_RE = re.compile(r"^\S+$")


def canonical_label(token: str) -> str:
    """Lowercase and trim a marking class name.

    Raises:
        InvalidInputError: if the token is empty or contains inner whitespace.
    """
    if not isinstance(token, str):
        raise InvalidInputError(f"label must be a string, got {type(token).__name__}")
    out = token.strip().lower()
    if not out or not _LABEL_RE.match(out):
        raise InvalidInputError(f"invalid marking label {token!r}")
    return out


@dataclass(frozen=True, slots=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidInputError("principal point outside the image")

    def contains(self, u: float, v: float) -> bool:
        return 0 <= u < self.width and 0 <= v < self.height


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion given as (w, x, y, z)."""
    w, x, y, z = (float(c) for c in q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`quat_to_matrix` (Shepperd's method), w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


@dataclass(frozen=True, slots=True)
class CameraPose:
    """World-from-camera pose."""

    position: np.ndarray
    orientation: np.ndarray  # (w, x, y, z)
    rotation: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        qn = math.sqrt(float(q @ q))
        if not abs(qn - 1.0) <= 1e-9:
            raise InvalidInputError(f"orientation quaternion is not unit norm: |q| = {qn!r}")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "rotation", quat_to_matrix(q))

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]


def mount_pose(position_xy, heading: float, height: float, pitch: float) -> CameraPose:
    """Pose of a forward-facing camera on a car.

    Args:
        position_xy: ground position of the camera (m).
        heading: travel direction, radians counter-clockwise from +x.
        height: camera elevation above z = 0 (m).
        pitch: downward tilt of the optical axis below horizontal (rad).
    """
    # yaw about world z, times the level mount (x right, y down, z ahead),
    # times a downward tilt about the camera x axis, expanded in closed form
    c, s = math.cos(heading / 2), math.sin(heading / 2)
    a, b = math.cos(pitch / 2), math.sin(pitch / 2)
    P, M = 0.5 * (c + s), 0.5 * (c - s)
    q = np.array([P * (a - b), -P * (a + b), M * (a + b), -M * (a - b)])
    if q[0] < 0:
        q = -q
    pos = np.array([position_xy[0], position_xy[1], height], dtype=float)
    return CameraPose(pos, q)


@dataclass(frozen=True, slots=True)
class GroundPlane:
    """Points p on the plane satisfy dot(normal, p) == offset."""

    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            raise InvalidInputError("plane normal must have unit norm")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    def signed_distance(self, p) -> float:
        return float(np.dot(self.normal, p)) - self.offset


@dataclass(frozen=True, slots=True)
class Detection:
    frame_id: int
    timestamp: float
    label: str
    centroid: tuple[float, float]
    truth_id: int | None = None  # simulator link; None for real or clutter detections


@dataclass(frozen=True, slots=True)
class Observation3D:
    frame_id: int
    label: str
    position: np.ndarray
    truth_id: int | None = None


class Ray(NamedTuple):
    origin: np.ndarray
    direction: np.ndarray


def pixel_ray(intrinsics: CameraIntrinsics, pose: CameraPose, pixel) -> Ray:
    u, v = float(pixel[0]), float(pixel[1])
    if not intrinsics.contains(u, v):
        raise InvalidInputError(
            f"pixel ({u}, {v}) outside {intrinsics.width}x{intrinsics.height} image"
        )
    d = np.array([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0])
    d = pose.rotation @ d
    return Ray(pose.position.copy(), d / np.linalg.norm(d))


def intersect_ground(ray: Ray, plane: GroundPlane) -> np.ndarray | None:
    """Forward intersection of a ray with the road plane.

    Returns None when the ray is parallel to the plane or the hit lies at or
    behind the ray origin.
    """
    denom = float(np.dot(plane.normal, ray.direction))
    if abs(denom) < PARALLEL_EPS:
        return None
    t = (plane.offset - float(np.dot(plane.normal, ray.origin))) / denom
    if not t > 0:
        return None
    return ray.origin + t * ray.direction


def project_point(intrinsics: CameraIntrinsics, pose: CameraPose, point) -> tuple[float, float] | None:
    """Pixel of a world point, or None if it is behind the camera."""
    pc = pose.rotation.T @ (np.asarray(point, dtype=float) - pose.position)
    if pc[2] <= 0:
        return None
    return (
        intrinsics.fx * pc[0] / pc[2] + intrinsics.cx,
        intrinsics.fy * pc[1] / pc[2] + intrinsics.cy,
    )


def localize_detection(
    det: Detection,
    pose: CameraPose,
    intrinsics: CameraIntrinsics,
    plane: GroundPlane,
) -> Observation3D | None:
    """Ground position of a detection's centroid.

    Detections whose ray never reaches the road (at or above the horizon)
    give None; callers count these rather than failing the frame.
    """
    hit = intersect_ground(pixel_ray(intrinsics, pose, det.centroid), plane)
    if hit is None:
        logger.debug("frame %d: %s centroid %s misses the ground", det.frame_id, det.label, det.centroid)
        return None
    return Observation3D(det.frame_id, det.label, hit, det.truth_id)
