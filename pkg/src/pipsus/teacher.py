"""Pseudo-ground-truth supply for teacher-student training.

Labels from an external whole-clip tracker arrive as trajectory files. For
desk-scale runs on simulated data the exact analytic trajectories stand in
for the external model.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .datamodel import PointSet, TrajectorySet, VideoSequence, load_trajectories
from .errors import EmptyLabels, FormatError, NotFound
from .simulator import SimLog, trajectories_from_log

DEFAULT_DISPLACEMENT_CAP = 50.0


def max_frame_displacement(traj: TrajectorySet) -> np.ndarray:
    """Per point, the largest jump between consecutive frames where both are valid."""
    step = np.linalg.norm(np.diff(traj.positions, axis=1), axis=-1)
    both = traj.valid[:, 1:] & traj.valid[:, :-1]
    step = np.where(both, step, 0.0)
    return step.max(axis=1) if traj.T > 1 else np.zeros(traj.n)


def filter_teacher_labels(traj: TrajectorySet, cap: float | None = DEFAULT_DISPLACEMENT_CAP):
    """Drop points whose trajectory jumps more than ``cap`` pixels in one frame.

    Returns the filtered set and the boolean keep-mask over the input points.
    """
    keep = np.ones(traj.n, bool) if cap is None else max_frame_displacement(traj) <= cap
    keep &= traj.valid.any(axis=1)
    return traj.subset(keep), keep


def ingest_teacher_labels(
    seq: VideoSequence, label_file, cap: float | None = DEFAULT_DISPLACEMENT_CAP
) -> TrajectorySet:
    """Load external labels for ``seq`` and apply the displacement sanity cap."""
    path = Path(label_file)
    if not path.exists():
        raise NotFound(f"label file not found: {path}")
    if path.stat().st_size == 0:
        raise EmptyLabels(f"{path}: empty label file")
    traj = load_trajectories(path)
    if traj.T != len(seq):
        raise FormatError(f"{path}: labels have T={traj.T} but sequence has T={len(seq)}")
    if traj.n == 0:
        raise EmptyLabels(f"{path}: no trajectories")
    kept, _ = filter_teacher_labels(traj, cap)
    if kept.n == 0:
        raise EmptyLabels(f"{path}: every trajectory was rejected by the displacement cap")
    return TrajectorySet(kept.positions, kept.valid, "teacher")


def oracle_teacher(seq: VideoSequence, points: PointSet, sim_log) -> TrajectorySet:
    """Exact labels for a simulated sequence from its logged motion."""
    if sim_log is None:
        raise NotFound("no simulation log available for the oracle teacher")
    if not isinstance(sim_log, SimLog):
        sim_log = SimLog.load(sim_log)
    if len(sim_log.matrices) != len(seq):
        raise FormatError(
            f"simulation log has {len(sim_log.matrices)} frames, sequence has {len(seq)}"
        )
    H, W = seq.shape
    return trajectories_from_log(points, sim_log, H, W, source="teacher")
