"""Keypoint detection for the points to be tracked."""

from __future__ import annotations

import cv2
import numpy as np

from .config import DetectorConfig
from .datamodel import PointSet, load_points
from .errors import InvalidArgument


def _to_uint8(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        return frame
    return np.clip(np.round(frame.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def sift_points(frame: np.ndarray, cfg: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    sift = cv2.SIFT_create(
        contrastThreshold=cfg.contrast_threshold, edgeThreshold=cfg.edge_threshold
    )
    kps = sift.detect(_to_uint8(frame), None)
    if not kps:
        return np.zeros((0, 2)), np.zeros(0)
    pts = np.array([kp.pt for kp in kps], dtype=np.float64)
    resp = np.array([kp.response for kp in kps], dtype=np.float64)
    # SIFT reports the same location once per dominant orientation
    _, first = np.unique(np.round(pts, 4), axis=0, return_index=True)
    first = np.sort(first)
    return pts[first], resp[first]


def grid_points(H: int, W: int, stride: int) -> np.ndarray:
    """One point per ``stride`` x ``stride`` cell, at the cell's central pixel."""
    xs = np.arange(stride // 2, W, stride)
    ys = np.arange(stride // 2, H, stride)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)


def detect(frame: np.ndarray, cfg: DetectorConfig = DetectorConfig()) -> PointSet:
    """Detect points to track on one frame; may return an empty set."""
    frame = np.asarray(frame)
    if frame.ndim != 2:
        raise InvalidArgument("detect expects a single grayscale frame")
    H, W = frame.shape
    if cfg.detector == "manual":
        if cfg.points_path is None:
            raise InvalidArgument("manual detector needs points_path")
        pts, resp = load_points(cfg.points_path).points, None
    elif cfg.detector == "grid":
        pts, resp = grid_points(H, W, cfg.grid_stride), None
    else:
        pts, resp = sift_points(frame, cfg)
    inside = _inside_mask(pts, H, W, cfg.margin)
    pts = pts[inside]
    if cfg.max_points is not None and len(pts) > cfg.max_points:
        if resp is None:
            keep = np.arange(cfg.max_points)
        else:
            keep = np.sort(np.argsort(-resp[inside], kind="stable")[: cfg.max_points])
        pts = pts[keep]
    return PointSet(pts)


def _inside_mask(pts: np.ndarray, H: int, W: int, margin: float) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    return (x >= margin) & (x < W - margin) & (y >= margin) & (y < H - margin)


def filter_in_bounds(pts: PointSet, H: int, W: int, margin: float = 0.0) -> PointSet:
    """Keep points with ``margin <= x < W - margin`` and likewise for ``y``."""
    arr = pts.points if isinstance(pts, PointSet) else np.asarray(pts, np.float64).reshape(-1, 2)
    return PointSet(arr[_inside_mask(arr, H, W, margin)])
