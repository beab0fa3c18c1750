"""Comparison trackers: NCC template matching and the zero-motion tracker."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from .datamodel import PointSet, TrajectorySet
from .errors import InvalidArgument

# numerator via FFT once template area x placements exceeds this many
# multiply-adds; chosen with scripts/bench_ncc.py
FFT_MIN_WORK = 60_000
EPS = 1e-12


def _box_sum(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Sum over every ``h x w`` window (valid placements) via an integral image."""
    ii = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    ii[1:, 1:] = img.cumsum(0).cumsum(1)
    return ii[h:, w:] - ii[:-h, w:] - ii[h:, :-w] + ii[:-h, :-w]


def ncc_map(template: np.ndarray, search: np.ndarray, method: str = "auto") -> np.ndarray:
    """Normalized cross-correlation of ``template`` at every valid placement.

    Returns an ``(Hs - h + 1, Ws - w + 1)`` array in [-1, 1]. Windows with
    zero variance score 0. A zero-variance template raises InvalidArgument.
    """
    t = np.asarray(template, dtype=np.float64)
    s = np.asarray(search, dtype=np.float64)
    h, w = t.shape
    if s.shape[0] < h or s.shape[1] < w:
        raise InvalidArgument("search region smaller than template")
    t = t - t.mean()
    t_energy = float((t * t).sum())
    if t_energy <= EPS * t.size:
        raise InvalidArgument("template has zero variance")
    out_shape = (s.shape[0] - h + 1, s.shape[1] - w + 1)
    if method == "auto":
        method = "fft" if t.size * out_shape[0] * out_shape[1] >= FFT_MIN_WORK else "direct"
    if method == "fft":
        num = fftconvolve(s, t[::-1, ::-1], mode="valid")
    elif method == "direct":
        num = np.einsum("abij,ij->ab", sliding_window_view(s, (h, w)), t, optimize=True)
    else:
        raise InvalidArgument(f"unknown NCC method {method!r}")
    n = h * w
    ssum = _box_sum(s, h, w)
    ssq = _box_sum(s * s, h, w)
    s_var = np.maximum(ssq - ssum * ssum / n, 0.0)
    denom = np.sqrt(s_var * t_energy)
    ok = s_var > EPS * n * max(1.0, float(np.abs(s).max()) ** 2)
    out = np.zeros(out_shape)
    out[ok] = num[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def ncc_score(a: np.ndarray, b: np.ndarray) -> float:
    """NCC of two equally-sized patches; ``nan`` if either is flat."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt((a * a).sum() * (b * b).sum())
    if den <= EPS:
        return float("nan")
    return float(np.clip((a * b).sum() / den, -1.0, 1.0))


def _parabolic(c_minus: float, c0: float, c_plus: float) -> float:
    den = c_minus - 2 * c0 + c_plus
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (c_minus - c_plus) / den, -0.5, 0.5))


class NCCTracker:
    """Per-point template matching with a template refreshed every frame."""

    name = "ncc"

    def __init__(self, patch_size: int = 17, search_radius: int = 32, subpixel: bool = False,
                 update_template: bool = True, method: str = "auto"):
        if patch_size < 3 or patch_size % 2 == 0:
            raise InvalidArgument("patch_size must be odd and >= 3")
        self.patch_size = patch_size
        self.search_radius = search_radius
        self.subpixel = subpixel
        self.update_template = update_template
        self.method = method

    def _pad(self, frame: np.ndarray) -> np.ndarray:
        return np.pad(np.asarray(frame, dtype=np.float64), self.search_radius + self.patch_size, mode="edge")

    def _patch(self, padded: np.ndarray, cx: int, cy: int, half: int) -> np.ndarray:
        o = self.search_radius + self.patch_size
        return padded[cy + o - half: cy + o + half + 1, cx + o - half: cx + o + half + 1]

    def start(self, frame_0, points) -> np.ndarray:
        pts = points.points if isinstance(points, PointSet) else np.asarray(points, np.float64)
        self.pos = np.array(pts, dtype=np.float64).reshape(-1, 2)
        self.valid = np.ones(len(self.pos), bool)
        self.prev = self._pad(frame_0)
        H, W = np.asarray(frame_0).shape
        self.shape = (H, W)
        half = self.patch_size // 2
        self.templates = [self._patch(self.prev, *np.rint(p).astype(int), half).copy() for p in self.pos]
        return self.pos.copy()

    def update(self, frame) -> np.ndarray:
        cur = self._pad(frame)
        half, r = self.patch_size // 2, self.search_radius
        for i in np.flatnonzero(self.valid):
            cx, cy = np.rint(self.pos[i]).astype(int)
            tmpl = self._patch(self.prev, cx, cy, half) if self.update_template else self.templates[i]
            search = self._patch(cur, cx, cy, half + r)
            try:
                score = ncc_map(tmpl, search, self.method)
            except InvalidArgument:
                self.valid[i] = False
                continue
            iy, ix = np.unravel_index(np.argmax(score), score.shape)
            dx, dy = float(ix - r), float(iy - r)
            if self.subpixel:
                if 0 < ix < score.shape[1] - 1:
                    dx += _parabolic(score[iy, ix - 1], score[iy, ix], score[iy, ix + 1])
                if 0 < iy < score.shape[0] - 1:
                    dy += _parabolic(score[iy - 1, ix], score[iy, ix], score[iy + 1, ix])
            self.pos[i] = self.pos[i] + (np.array([cx + dx, cy + dy]) - np.array([cx, cy]))
        self.prev = cur
        return self.pos.copy()

    def track(self, video, points) -> TrajectorySet:
        return run_streaming(self, video, points)


class ZeroMotionTracker:
    """Reports every point at its initial position forever."""

    name = "zero"

    def start(self, frame_0, points) -> np.ndarray:
        pts = points.points if isinstance(points, PointSet) else np.asarray(points, np.float64)
        self.pos = np.array(pts, dtype=np.float64).reshape(-1, 2)
        self.valid = np.ones(len(self.pos), bool)
        return self.pos.copy()

    def update(self, frame) -> np.ndarray:
        return self.pos.copy()

    def track(self, video, points) -> TrajectorySet:
        return run_streaming(self, video, points)


def run_streaming(tracker, video, points) -> TrajectorySet:
    """Drive a ``start``/``update`` tracker over ``video`` and collect rows."""
    frames = iter(video)
    rows = [tracker.start(next(frames), points)]
    valid = [np.ones(len(rows[0]), bool)]
    for frame in frames:
        rows.append(tracker.update(frame))
        valid.append(getattr(tracker, "valid", np.ones(len(rows[0]), bool)).copy())
    return TrajectorySet(np.stack(rows, axis=1), np.stack(valid, axis=1), "model")


def ncc_track(video, points, patch_size: int = 17, search_radius: int = 32,
              subpixel: bool = False, update_template: bool = True) -> TrajectorySet:
    return NCCTracker(patch_size, search_radius, subpixel, update_template).track(video, points)


def zero_motion_track(video, points) -> TrajectorySet:
    return ZeroMotionTracker().track(video, points)
