"""Synthetic videos with known per-point motion.

A base frame is warped by a cumulative affine transform per frame, then
intensity-modulated and noised. The ground-truth trajectory of a keypoint
is the same affine transform applied to its initial position, so labels
depend on geometry only.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .config import SimConfig
from .datamodel import PointSet, TrajectorySet, VideoSequence
from .errors import FormatError, InvalidArgument, NotFound

SIMLOG_MAGIC = "PIPSUS-SIMLOG"
SIMLOG_VERSION = 1


@dataclass(frozen=True)
class SimLog:
    """Everything needed to recompute ground truth for a simulated sequence.

    ``matrices[t]`` is the 2x3 affine map from frame-0 pixel coordinates to
    frame-t pixel coordinates.
    """

    matrices: np.ndarray
    gains: np.ndarray
    biases: np.ndarray
    config: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "magic": SIMLOG_MAGIC,
                "version": SIMLOG_VERSION,
                "matrices": np.asarray(self.matrices).tolist(),
                "gains": np.asarray(self.gains).tolist(),
                "biases": np.asarray(self.biases).tolist(),
                "config": self.config,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "SimLog":
        doc = json.loads(text)
        if doc.get("magic") != SIMLOG_MAGIC or doc.get("version") != SIMLOG_VERSION:
            raise FormatError("not a simulation log (bad magic or version)")
        return cls(
            np.asarray(doc["matrices"], dtype=np.float64),
            np.asarray(doc["gains"], dtype=np.float64),
            np.asarray(doc["biases"], dtype=np.float64),
            doc["config"],
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "SimLog":
        path = Path(path)
        if not path.exists():
            raise NotFound(f"simulation log not found: {path}")
        try:
            return cls.from_json(path.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from exc


def _homogeneous(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.shape == (3, 3):
        return A
    if A.shape != (2, 3):
        raise InvalidArgument(f"affine matrix must be 2x3, got {A.shape}")
    return np.vstack([A, [0.0, 0.0, 1.0]])


def apply_affine(A, pts) -> np.ndarray:
    """Map ``(n, 2)`` points through a 2x3 (or 3x3) affine matrix."""
    A = _homogeneous(A)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    return pts @ A[:2, :2].T + A[:2, 2]


def warp_affine(frame: np.ndarray, A) -> np.ndarray:
    """Resample ``frame`` so content at ``q`` moves to ``A q``.

    Implemented as an inverse warp with bilinear interpolation; samples
    falling outside the frame take the nearest border value.
    """
    A = _homogeneous(A)
    if not np.all(np.isfinite(A)):
        raise InvalidArgument("affine matrix must be finite")
    if abs(np.linalg.det(A[:2, :2])) < 1e-12:
        raise InvalidArgument("affine matrix has a singular linear part")
    inv = np.linalg.inv(A)
    frame = np.asarray(frame)
    H, W = frame.shape
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    src_x = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    src_y = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    out = ndimage.map_coordinates(
        frame.astype(np.float64), [src_y, src_x], order=1, mode="nearest"
    )
    return out.astype(frame.dtype, copy=False)


def _in_image(pts: np.ndarray, H: int, W: int) -> np.ndarray:
    return (pts[:, 0] >= 0) & (pts[:, 0] <= W - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= H - 1)


def _corners(H: int, W: int) -> np.ndarray:
    return np.array([[0, 0], [W - 1, 0], [0, H - 1], [W - 1, H - 1]], dtype=np.float64)


def max_step_displacement(matrices: np.ndarray, H: int, W: int) -> np.ndarray:
    """Largest displacement of any in-image point between consecutive frames.

    Displacement under ``D - I`` is affine in the point, so its norm over
    the image rectangle peaks at a corner.
    """
    corners = _corners(H, W)
    out = np.zeros(len(matrices))
    for t in range(1, len(matrices)):
        D = _homogeneous(matrices[t]) @ np.linalg.inv(_homogeneous(matrices[t - 1]))
        out[t] = np.linalg.norm(apply_affine(D, corners) - corners, axis=1).max()
    return out


def _affine_from_params(p: np.ndarray, center: np.ndarray) -> np.ndarray:
    tx, ty, rot, log_sx, log_sy, shear = p
    c, s = np.cos(rot), np.sin(rot)
    lin = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]])
    lin = lin @ np.diag([np.exp(log_sx), np.exp(log_sy)])
    A = np.eye(3)
    A[:2, :2] = lin
    A[:2, 2] = center + np.array([tx, ty]) - lin @ center
    return A


def _translation_motion(cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    T, m = cfg.seq_len, cfg.max_translation_per_frame
    mats = np.tile(np.eye(3), (T, 1, 1))
    for t in range(1, T):
        angle = rng.uniform(0.0, 2 * np.pi)
        radius = m * np.sqrt(rng.uniform())
        mats[t] = mats[t - 1]
        mats[t, :2, 2] += radius * np.array([np.cos(angle), np.sin(angle)])
    return mats


def _smooth_affine_motion(cfg: SimConfig, rng: np.random.Generator, H: int, W: int) -> np.ndarray:
    T, m, a = cfg.seq_len, cfg.max_translation_per_frame, cfg.smoothness
    center = np.array([(W - 1) / 2.0, (H - 1) / 2.0])
    sigma = np.array([m, m] + [cfg.affine_jitter] * 4) / 2.0
    eps = rng.normal(size=(T, 6)) * sigma
    vel = np.zeros((T, 6))
    for t in range(1, T):
        vel[t] = a * vel[t - 1] + (1 - a) * eps[t]

    def build(scale):
        params = np.cumsum(vel * scale, axis=0)
        return np.stack([_affine_from_params(p, center) for p in params])

    scale = 1.0
    mats = build(scale)
    # shrink the whole path until every in-image step respects the bound
    while T > 1 and max_step_displacement(mats, H, W).max() > m:
        scale *= 0.9
        mats = build(scale)
    return mats


def motion_matrices(cfg: SimConfig, H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    """Cumulative ``(T, 3, 3)`` frame-0-to-frame-t matrices for ``cfg``."""
    if cfg.motion_model == "zero":
        return np.tile(np.eye(3), (cfg.seq_len, 1, 1))
    if cfg.motion_model == "per_frame_random_translation":
        return _translation_motion(cfg, rng)
    return _smooth_affine_motion(cfg, rng, H, W)


def trajectories_from_log(points, log: SimLog, H: int, W: int, source="simulation") -> TrajectorySet:
    """Apply the logged matrices to ``points``; validity ends once a point exits."""
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, np.float64)
    pos = np.stack([apply_affine(A, pts) for A in log.matrices], axis=1)
    inside = np.stack([_in_image(pos[:, t], H, W) for t in range(pos.shape[1])], axis=1)
    valid = np.logical_and.accumulate(inside, axis=1)
    return TrajectorySet(pos, valid, source)


def simulate_sequence(
    base_frame: np.ndarray,
    keypoints: PointSet,
    cfg: SimConfig,
    seq_id: str = "sim",
    return_log: bool = False,
    matrices=None,
):
    """Warp ``base_frame`` through a random motion and return video plus labels.

    Frame 0 is the untouched base frame. Later frames get a global gain and
    bias and additive Gaussian noise, clipped to [0, 1]. Returns
    ``(VideoSequence, TrajectorySet)``, plus the :class:`SimLog` when
    ``return_log`` is set. ``matrices`` (``(T, 2|3, 3)`` cumulative maps)
    overrides the configured motion model.
    """
    base = np.asarray(base_frame, dtype=np.float64)
    if base.ndim != 2 or not np.all(np.isfinite(base)):
        raise InvalidArgument("base_frame must be a finite 2-D image")
    H, W = base.shape
    if len(keypoints) and not np.all(_in_image(keypoints.points, H, W)):
        raise InvalidArgument("keypoints must lie inside the base frame")

    rng = np.random.default_rng(cfg.rng_seed)
    if matrices is None:
        mats = motion_matrices(cfg, H, W, rng)
    else:
        mats = np.stack([_homogeneous(A) for A in matrices])
    T = len(mats)
    gains = np.ones(T)
    biases = np.zeros(T)
    gains[1:] = rng.uniform(*cfg.intensity_gain_range, size=T - 1)
    biases[1:] = rng.uniform(*cfg.intensity_bias_range, size=T - 1)

    frames = np.empty((T, H, W), dtype=np.float32)
    frames[0] = np.clip(base, 0.0, 1.0)
    for t in range(1, T):
        img = base if np.array_equal(mats[t], np.eye(3)) else warp_affine(base, mats[t])
        img = gains[t] * img + biases[t]
        if cfg.noise_std > 0:
            img = img + rng.normal(0.0, cfg.noise_std, size=img.shape)
        frames[t] = np.clip(img, 0.0, 1.0)

    log = SimLog(mats[:, :2, :], gains, biases, json.loads(json.dumps(dataclasses.asdict(cfg))))
    seq = VideoSequence(frames, id=seq_id)
    traj = trajectories_from_log(keypoints, log, H, W)
    return (seq, traj, log) if return_log else (seq, traj)


def make_zero_flow_batch(frame: np.ndarray, keypoints: PointSet, seq_len: int = 41):
    """Static video of ``frame`` repeated ``seq_len`` times with constant labels."""
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 2:
        raise InvalidArgument("frame must be a 2-D image")
    if seq_len < 1:
        raise InvalidArgument("seq_len must be >= 1")
    if len(keypoints) == 0:
        raise InvalidArgument("need at least one keypoint")
    seq = VideoSequence(np.repeat(frame[None], seq_len, axis=0), id="static")
    pos = np.repeat(keypoints.points[:, None, :], seq_len, axis=1)
    return seq, TrajectorySet(pos, None, "simulation")


def speckle_image(
    size=(256, 256), rng: Optional[np.random.Generator] = None, speckle_sigma: float = 1.0
) -> np.ndarray:
    """Ultrasound-like texture: smooth tissue echogenicity times speckle.

    Fully developed speckle has Rayleigh-distributed amplitude; a small blur
    gives it a finite correlation length. Bright ellipses stand in for
    anatomical structures.
    """
    rng = rng or np.random.default_rng()
    H, W = size
    tissue = ndimage.gaussian_filter(rng.normal(size=(H, W)), sigma=max(H, W) / 12)
    tissue = (tissue - tissue.min()) / (np.ptp(tissue) + 1e-12)
    ys, xs = np.mgrid[0:H, 0:W]
    for _ in range(rng.integers(2, 6)):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        ry, rx = rng.uniform(0.05, 0.2) * H, rng.uniform(0.05, 0.2) * W
        inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
        tissue = np.where(inside, tissue * rng.uniform(0.2, 1.8), tissue)
    speckle = rng.rayleigh(scale=1.0, size=(H, W))
    speckle = ndimage.gaussian_filter(speckle, sigma=speckle_sigma)
    img = (0.3 + tissue) * speckle
    img = img / np.percentile(img, 99.5)
    return np.clip(img, 0.0, 1.0).astype(np.float32)
