"""Core value types, on-disk formats, and bilinear sampling.

Coordinates are ``(x, y)`` in pixels with ``x`` along the width (column) and
``y`` along the height (row). The centre of the top-left pixel is ``(0, 0)``,
so integer coordinates address pixel centres exactly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import cv2
import numpy as np
import torch

from .errors import FormatError, InvalidArgument, NotFound

TRAJ_MAGIC = "PIPSUS-TRAJ"
TRAJ_VERSION = 1
POINTS_MAGIC = "PIPSUS-POINTS"
POINTS_VERSION = 1
SOURCES = ("model", "teacher", "simulation")
FRAME_PATTERN = "frame_{:05d}.png"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class VideoSequence:
    """Grayscale frames stacked as a ``(T, H, W)`` float32 array in [0, 1]."""

    frames: np.ndarray
    id: str = "sequence"
    frame_rate_hint: Optional[float] = None

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3 or frames.shape[0] < 1:
            raise InvalidArgument(f"frames must be (T, H, W) with T >= 1, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise InvalidArgument("frames contain non-finite intensities")
        if frames.min() < 0.0 or frames.max() > 1.0:
            raise InvalidArgument("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "frames", _frozen(frames))

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


@dataclass(frozen=True)
class PointSet:
    """``n`` subpixel points as an ``(n, 2)`` array of ``(x, y)``.

    A detector may legitimately return zero points; consumers that need at
    least one point (tracking, sampling) check for that themselves.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if not np.all(np.isfinite(pts)):
            raise InvalidArgument("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]


@dataclass(frozen=True)
class TrajectorySet:
    """Per-point, per-frame positions ``(n, T, 2)`` with validity ``(n, T)``."""

    positions: np.ndarray
    valid: np.ndarray = None
    source: str = "model"

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[-1] != 2:
            raise InvalidArgument(f"positions must be (n, T, 2), got {pos.shape}")
        valid = np.ones(pos.shape[:2], bool) if self.valid is None else np.asarray(self.valid, bool)
        if valid.shape != pos.shape[:2]:
            raise InvalidArgument(f"valid shape {valid.shape} != positions shape {pos.shape[:2]}")
        if not np.all(np.isfinite(pos[valid])):
            raise InvalidArgument("positions must be finite wherever valid")
        if self.source not in SOURCES:
            raise InvalidArgument(f"unknown trajectory source {self.source!r}")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "valid", _frozen(valid))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def T(self) -> int:
        return self.positions.shape[1]

    def at(self, t: int) -> PointSet:
        return PointSet(self.positions[:, t])

    def subset(self, keep) -> "TrajectorySet":
        return TrajectorySet(self.positions[keep], self.valid[keep], self.source)

    def __eq__(self, other):
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        return (
            self.source == other.source
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.positions, other.positions, equal_nan=True)
        )

    __hash__ = None


# ---------------------------------------------------------------------------
# Sequences on disk


def _to_unit(img: np.ndarray, name: str) -> np.ndarray:
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2GRAY)
    if img.dtype == np.uint8:
        return img.astype(np.float32) / 255.0
    if img.dtype == np.uint16:
        return img.astype(np.float32) / 65535.0
    img = img.astype(np.float32)
    if img.min() < 0 or img.max() > 1:
        raise FormatError(f"{name}: float image outside [0, 1]")
    return img


def _resize(img: np.ndarray, size) -> np.ndarray:
    h, w = size
    if img.shape == (h, w):
        return img
    out = cv2.resize(img, (w, h), interpolation=cv2.INTER_AREA)
    return np.clip(out, 0.0, 1.0)


def load_sequence(path, size=(256, 256), seq_id: Optional[str] = None) -> VideoSequence:
    """Load a directory of images or a ``.npy``/``.npz`` stack of frames.

    Frames are ordered by the integer index in the filename (falling back to
    name order), converted to grayscale and scaled to [0, 1]. ``size`` is
    ``(H, W)``; pass ``None`` to keep native sizes, in which case all frames
    must agree.
    """
    path = Path(path)
    if not path.exists():
        raise NotFound(f"sequence path not found: {path}")
    seq_id = seq_id or path.stem
    frames = list(iter_frames(path, size))
    if not frames:
        raise FormatError(f"{path}: no decodable images")
    shapes = {f.shape for f in frames}
    if len(shapes) > 1:
        raise FormatError(f"{path}: mixed frame sizes {sorted(shapes)} with resize disabled")
    return VideoSequence(np.stack(frames), id=seq_id)


def _frame_key(p: Path):
    nums = re.findall(r"\d+", p.stem)
    return (int(nums[-1]) if nums else -1, p.name)


def iter_frames(path, size=(256, 256)) -> Iterator[np.ndarray]:
    """Yield normalised frames one at a time (streaming read)."""
    path = Path(path)
    if not path.exists():
        raise NotFound(f"sequence path not found: {path}")
    if path.is_dir():
        files = sorted(
            (p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES), key=_frame_key
        )
        for f in files:
            img = cv2.imread(str(f), cv2.IMREAD_UNCHANGED)
            if img is None:
                raise FormatError(f"cannot decode image {f.name}")
            img = _to_unit(img, f.name)
            yield img if size is None else _resize(img, size)
    elif path.suffix in (".npy", ".npz"):
        try:
            data = np.load(path)
            if isinstance(data, np.lib.npyio.NpzFile):
                data = data["frames"]
        except (ValueError, KeyError, OSError) as exc:
            raise FormatError(f"{path}: {exc}") from exc
        data = np.asarray(data)
        if data.ndim == 2:
            data = data[None]
        for i, img in enumerate(data):
            img = _to_unit(img, f"{path.name}[{i}]")
            yield img if size is None else _resize(img, size)
    else:
        img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if img is None:
            raise FormatError(f"cannot decode image {path.name}")
        img = _to_unit(img, path.name)
        yield img if size is None else _resize(img, size)


def save_sequence(seq: VideoSequence, directory) -> None:
    """Write frames as 16-bit PNGs named ``frame_%05d.png``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        img = np.round(frame.astype(np.float64) * 65535.0).astype(np.uint16)
        cv2.imwrite(str(directory / FRAME_PATTERN.format(t)), img)


# ---------------------------------------------------------------------------
# Trajectory and point files


def save_trajectories(traj: TrajectorySet, path) -> None:
    doc = {
        "magic": TRAJ_MAGIC,
        "version": TRAJ_VERSION,
        "n": traj.n,
        "T": traj.T,
        "source": traj.source,
        "positions": traj.positions.tolist(),
        "valid": traj.valid.astype(int).tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def _read_json(path, magic: str, version: int) -> dict:
    path = Path(path)
    if not path.exists():
        raise NotFound(f"file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not a valid {magic} file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("magic") != magic:
        raise FormatError(f"{path}: expected magic {magic!r}")
    if doc.get("version") != version:
        raise FormatError(f"{path}: expected version {version}, found {doc.get('version')}")
    return doc


def load_trajectories(path) -> TrajectorySet:
    doc = _read_json(path, TRAJ_MAGIC, TRAJ_VERSION)
    n, T = doc["n"], doc["T"]
    pos = np.asarray(doc["positions"], dtype=np.float64)
    valid = np.asarray(doc["valid"], dtype=bool)
    if n == 0:
        pos = pos.reshape(0, T, 2)
        valid = valid.reshape(0, T)
    if pos.shape != (n, T, 2) or valid.shape != (n, T):
        raise FormatError(
            f"{path}: header says n={n}, T={T} but data has shape {pos.shape} / {valid.shape}"
        )
    try:
        return TrajectorySet(pos, valid, doc["source"])
    except InvalidArgument as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_points(pts: PointSet, path) -> None:
    doc = {
        "magic": POINTS_MAGIC,
        "version": POINTS_VERSION,
        "n": len(pts),
        "points": pts.points.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_points(path) -> PointSet:
    doc = _read_json(path, POINTS_MAGIC, POINTS_VERSION)
    pts = np.asarray(doc["points"], dtype=np.float64).reshape(-1, 2)
    if len(pts) != doc["n"]:
        raise FormatError(f"{path}: header says n={doc['n']} but found {len(pts)} points")
    return PointSet(pts)


# ---------------------------------------------------------------------------
# Sampling


def bilinear_sample(fmap, pts):
    """Sample a ``(C, H, W)`` (or ``(H, W)``) field at subpixel points.

    ``pts`` has shape ``(..., 2)`` holding ``(x, y)``; the result has shape
    ``(..., C)`` (or ``(...)`` for a 2-D field). A batch of maps
    ``(B, C, H, W)`` pairs with points ``(B, ..., 2)``. Coordinates outside
    the map are clamped to the border. Works on torch tensors
    (differentiable in both arguments) and on numpy arrays.
    """
    as_numpy = not isinstance(fmap, torch.Tensor)
    if as_numpy:
        fmap = torch.from_numpy(np.asarray(fmap, dtype=np.float64))
    if isinstance(pts, PointSet):
        pts = pts.points
    if not isinstance(pts, torch.Tensor):
        pts = torch.as_tensor(np.array(pts), dtype=fmap.dtype)
    if pts.shape[-1] != 2:
        raise InvalidArgument(f"points must have trailing dimension 2, got {tuple(pts.shape)}")
    if pts.numel() == 0:
        raise InvalidArgument("cannot sample at an empty point set")
    squeeze = fmap.dim() == 2
    batched = fmap.dim() == 4
    if squeeze:
        fmap = fmap[None]
    if not batched:
        fmap = fmap[None]
        pts = pts[None]
    B, C, H, W = fmap.shape
    if pts.shape[0] != B:
        raise InvalidArgument(f"{B} maps but points batch is {pts.shape[0]}")
    lead = pts.shape[:-1]
    p = pts.reshape(B, -1, 2).to(fmap.dtype)

    x = p[..., 0].clamp(0, W - 1)
    y = p[..., 1].clamp(0, H - 1)
    x0 = torch.floor(x).clamp(max=max(W - 2, 0))
    y0 = torch.floor(y).clamp(max=max(H - 2, 0))
    wx = x - x0
    wy = y - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=W - 1)
    y1 = (y0 + 1).clamp(max=H - 1)

    # one gather for all four neighbours: (B, C, 4 * N)
    idx = torch.cat([y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1], dim=1)
    vals = torch.gather(fmap.reshape(B, C, H * W), 2, idx[:, None].expand(B, C, idx.shape[1]))
    vals = vals.reshape(B, C, 4, -1)
    w = torch.stack([(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy], dim=1)
    out = (vals * w[:, None]).sum(2)  # (B, C, N)
    out = out.transpose(1, 2).reshape(*lead, C)
    if not batched:
        out = out[0]
    if squeeze:
        out = out[..., 0]
    return out.numpy() if as_numpy else out
