"""Streaming multi-point tracking for ultrasound-like grayscale video."""

from .config import (
    DetectorConfig,
    LossConfig,
    SimConfig,
    TrackerConfig,
    TrainConfig,
)
from .datamodel import PointSet, TrajectorySet, VideoSequence

__all__ = [
    "DetectorConfig",
    "LossConfig",
    "PointSet",
    "SimConfig",
    "TrackerConfig",
    "TrainConfig",
    "TrajectorySet",
    "VideoSequence",
]

__version__ = "0.1.0"
