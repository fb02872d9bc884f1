"""Place recognition and loop-candidate detection from road-marking sequences."""

__version__ = "0.1.0"

from .database import EngineConfig, MarkingSequence, SequenceDatabase, SequenceSnapshot, sequence_gaps
from .errors import InvalidInputError
from .geometry import (
    CameraIntrinsics,
    CameraPose,
    Detection,
    GroundPlane,
    Observation3D,
    intersect_ground,
    localize_detection,
    pixel_ray,
)
from .matcher import MatchCandidate, MatchReport, Mode, admissible_pair, batch_match, incremental_match, indexed_match, sequences_match

__all__ = [
    "CameraIntrinsics",
    "CameraPose",
    "Detection",
    "EngineConfig",
    "GroundPlane",
    "InvalidInputError",
    "MarkingSequence",
    "MatchCandidate",
    "MatchReport",
    "Mode",
    "Observation3D",
    "SequenceDatabase",
    "SequenceSnapshot",
    "admissible_pair",
    "batch_match",
    "incremental_match",
    "indexed_match",
    "intersect_ground",
    "localize_detection",
    "pixel_ray",
    "sequence_gaps",
    "sequences_match",
]
