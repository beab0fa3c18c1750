"""Tracking metrics, drift curves, FPS measurement and report emission."""

from __future__ import annotations

import csv
import json
import os
import platform
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import ncc_score
from .datamodel import TrajectorySet, bilinear_sample
from .errors import InvalidArgument

SURVIVAL_THRESHOLD = 50.0


@dataclass
class Summary:
    mean: float
    std: float
    count: int

    def __str__(self):
        return f"{self.mean:.2f}±{self.std:.2f}"


def _check_pair(pred: TrajectorySet, gt: TrajectorySet):
    if pred.positions.shape != gt.positions.shape:
        raise InvalidArgument(
            f"prediction shape {pred.positions.shape} != ground truth {gt.positions.shape}"
        )


def _summary(values: np.ndarray) -> Summary:
    if values.size == 0:
        return Summary(float("nan"), float("nan"), 0)
    return Summary(float(values.mean()), float(values.std()), int(values.size))


def l2_error(pred: TrajectorySet, gt: TrajectorySet):
    """Per-point-per-frame Euclidean error and its summary.

    Only entries valid in both sets are scored (others are ``nan``); frame 0
    is left out of the summary because it is exact by construction.
    """
    _check_pair(pred, gt)
    both = pred.valid & gt.valid
    err = np.linalg.norm(pred.positions - gt.positions, axis=-1)
    err = np.where(both, err, np.nan)
    scored = err[:, 1:][both[:, 1:]]
    return err, _summary(scored)


def _patch_grid(patch_size: int) -> np.ndarray:
    d = np.arange(patch_size) - (patch_size - 1) / 2.0
    gy, gx = np.meshgrid(d, d, indexing="ij")
    return np.stack([gx, gy], axis=-1)


@dataclass
class NCCReport:
    summary: Summary
    per_point: np.ndarray
    excluded_border: int = 0
    excluded_flat: int = 0


def patch_ncc(ref_frame, frame_t, ref_positions, pred_positions, patch_size: int = 16,
              valid=None) -> NCCReport:
    """NCC between the patch at each point's reference location and its prediction.

    Patches are bilinearly sampled on a ``patch_size`` grid centred on the
    point. Points whose patch would cross the border, or whose patch is
    flat, are excluded and counted.
    """
    ref = np.asarray(ref_frame, dtype=np.float64)
    cur = np.asarray(frame_t, dtype=np.float64)
    ref_p = np.asarray(ref_positions, dtype=np.float64).reshape(-1, 2)
    pred_p = np.asarray(pred_positions, dtype=np.float64).reshape(-1, 2)
    grid = _patch_grid(patch_size)
    half = (patch_size - 1) / 2.0
    valid = np.ones(len(pred_p), bool) if valid is None else np.asarray(valid, bool)
    out = np.full(len(pred_p), np.nan)
    border = flat = 0
    for i in np.flatnonzero(valid):
        inside = True
        for img, p in ((ref, ref_p[i]), (cur, pred_p[i])):
            H, W = img.shape
            if not (half <= p[0] <= W - 1 - half and half <= p[1] <= H - 1 - half):
                inside = False
        if not inside:
            border += 1
            continue
        a = bilinear_sample(ref, grid + ref_p[i])
        b = bilinear_sample(cur, grid + pred_p[i])
        score = ncc_score(a, b)
        if np.isnan(score):
            flat += 1
            continue
        out[i] = score
    return NCCReport(_summary(out[~np.isnan(out)]), out, border, flat)


def sequence_patch_ncc(frames, pred: TrajectorySet, patch_size: int = 16, reference: str = "first"):
    """Patch NCC over frames ``1..T-1`` against frame 0 (or the previous frame)."""
    scores, border, flat = [], 0, 0
    for t in range(1, pred.T):
        r = 0 if reference == "first" else t - 1
        rep = patch_ncc(frames[r], frames[t], pred.positions[:, r], pred.positions[:, t],
                        patch_size, pred.valid[:, t])
        scores.append(rep.per_point[~np.isnan(rep.per_point)])
        border += rep.excluded_border
        flat += rep.excluded_flat
    values = np.concatenate(scores) if scores else np.zeros(0)
    return NCCReport(_summary(values), values, border, flat)


def survival_rate(pred: TrajectorySet, gt: TrajectorySet, threshold: float = SURVIVAL_THRESHOLD) -> float:
    """Fraction of points whose final-frame error is below ``threshold``."""
    _check_pair(pred, gt)
    both = pred.valid[:, -1] & gt.valid[:, -1]
    if not both.any():
        return float("nan")
    err = np.linalg.norm(pred.positions[:, -1] - gt.positions[:, -1], axis=-1)[both]
    return float(np.mean(err < threshold))


@dataclass
class DriftCurve:
    mean: np.ndarray
    p10: np.ndarray
    p90: np.ndarray

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "mean", "p10", "p90"])
            for t in range(len(self.mean)):
                w.writerow([t, repr(float(self.mean[t])), repr(float(self.p10[t])), repr(float(self.p90[t]))])

    @classmethod
    def load_csv(cls, path) -> "DriftCurve":
        rows = list(csv.DictReader(open(path)))
        return cls(*(np.array([float(r[k]) for r in rows]) for k in ("mean", "p10", "p90")))


def drift_curve(pred, gt) -> DriftCurve:
    """Per-frame mean, 10th and 90th percentile of the L2 error.

    Accepts one pair of trajectory sets or lists of pairs of equal length
    (pooled over all points of all sequences).
    """
    if isinstance(pred, TrajectorySet):
        pred, gt = [pred], [gt]
    errs = np.concatenate([l2_error(p, g)[0] for p, g in zip(pred, gt)], axis=0)
    T = errs.shape[1]
    mean, p10, p90 = np.full(T, np.nan), np.full(T, np.nan), np.full(T, np.nan)
    for t in range(T):
        col = errs[:, t][~np.isnan(errs[:, t])]
        if col.size:
            mean[t] = col.mean()
            p10[t], p90[t] = np.percentile(col, [10, 90])
    return DriftCurve(mean, p10, p90)


def machine_descriptor() -> dict:
    import torch

    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "torch_threads": torch.get_num_threads(),
        "python": platform.python_version(),
    }


@dataclass
class FPSReport:
    fps: float
    runs: list
    machine: dict = field(default_factory=machine_descriptor)


def measure_fps(tracker, video, points, warmup_frames: int = 2, runs: int = 3) -> FPSReport:
    """Median frames/second over post-warmup frames of ``runs`` passes.

    ``tracker`` exposes ``start(frame0, points)`` and ``update(frame)``.
    """
    frames = list(video)
    if len(frames) <= warmup_frames + 1:
        raise InvalidArgument("video must be longer than warmup_frames + 1")
    rates = []
    for _ in range(runs):
        tracker.start(frames[0], points)
        for f in frames[1: warmup_frames + 1]:
            tracker.update(f)
        timed = frames[warmup_frames + 1:]
        t0 = time.perf_counter()
        for f in timed:
            tracker.update(f)
        rates.append(len(timed) / (time.perf_counter() - t0))
    return FPSReport(statistics.median(rates), rates)


# ---------------------------------------------------------------------------
# Reports


def evaluate(pred: TrajectorySet, gt: TrajectorySet, frames=None, patch_size: int = 16,
             threshold: float = SURVIVAL_THRESHOLD) -> dict:
    _, l2 = l2_error(pred, gt)
    row = {
        "l2_mean": l2.mean,
        "l2_std": l2.std,
        "survival": survival_rate(pred, gt, threshold),
    }
    if frames is not None:
        ncc = sequence_patch_ncc(frames, pred, patch_size)
        row.update(ncc_mean=ncc.summary.mean, ncc_std=ncc.summary.std,
                   ncc_excluded=ncc.excluded_border + ncc.excluded_flat)
    return row


def report_rows(results: dict) -> list:
    """Flatten ``{(dataset, method): metrics}`` into keyed rows."""
    rows = []
    for (dataset, method), metrics in results.items():
        for metric, value in metrics.items():
            rows.append({"dataset": dataset, "method": method, "metric": metric, "value": value})
    return rows


def format_table(results: dict) -> str:
    """Human-readable table, one line per ``(dataset, method)``."""
    lines = [f"{'dataset':<12}{'method':<10}{'L2':>16}{'NCC':>14}{'survival':>10}{'FPS':>9}"]
    for (dataset, method), m in results.items():
        l2 = f"{m.get('l2_mean', np.nan):.2f}±{m.get('l2_std', np.nan):.2f}"
        ncc = f"{m.get('ncc_mean', np.nan):.2f}±{m.get('ncc_std', np.nan):.2f}"
        surv = f"{100 * m.get('survival', np.nan):.2f}%"
        fps = f"{m.get('fps', np.nan):.1f}"
        lines.append(f"{dataset:<12}{method:<10}{l2:>16}{ncc:>14}{surv:>10}{fps:>9}")
    return "\n".join(lines)


def write_report(results: dict, path) -> None:
    path = Path(path)
    rows = report_rows(results)
    if path.suffix == ".csv":
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["dataset", "method", "metric", "value"])
            w.writeheader()
            w.writerows(rows)
    else:
        path.write_text(json.dumps(rows, indent=1))


def plot_drift(curves: dict, path, title: str = "") -> None:
    """Mean L2 per frame with a 10-90 percentile band, one line per method."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, c in curves.items():
        t = np.arange(len(c.mean))
        ax.plot(t, c.mean, label=name)
        ax.fill_between(t, c.p10, c.p90, alpha=0.2)
    ax.set_xlabel("frame")
    ax.set_ylabel("L2 error (px)")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
