"""Two-phase training: simulation warmup, then teacher-student tuning.

Both phases roll the tracker through each sequence frame by frame. The
positions fed back as history are, per frame, either the ground truth plus
Gaussian noise or the model's own earlier predictions (detached), so the
model sees and learns to correct its own mistakes.
"""

from __future__ import annotations

import copy
import csv
import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .config import LossConfig, TrainConfig
from .datamodel import PointSet, TrajectorySet, VideoSequence
from .errors import InvalidArgument, TrainingDiverged
from .losses import sim_loss, teacher_loss, zero_flow_loss
from .simulator import make_zero_flow_batch
from .tracker import PIPsUS

log = logging.getLogger(__name__)

KINDS = ("teacher", "sim", "zero")


@dataclass(frozen=True)
class Sample:
    video: VideoSequence
    traj: TrajectorySet
    kind: str = "sim"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown sample kind {self.kind!r}")
        if self.traj.T != len(self.video):
            raise InvalidArgument("trajectory length does not match video length")
        if self.traj.n == 0:
            raise InvalidArgument("sample has no points")


def zero_flow_samples(frames, keypoints, seq_len: int) -> list:
    """Static-video samples, one per ``(frame, keypoints)`` pair."""
    out = []
    for frame, pts in zip(frames, keypoints):
        seq, traj = make_zero_flow_batch(frame, pts, seq_len)
        out.append(Sample(seq, traj, "zero"))
    return out


def history_forcing(gt_prev, model_prev, cfg: TrainConfig, rng: np.random.Generator,
                    gt_valid=None, use_gt: Optional[bool] = None):
    """Choose the positions used as history for one frame.

    With probability ``teacher_forcing_prob`` returns ``gt_prev`` plus
    ``N(0, forcing_noise_std**2)`` per coordinate, otherwise ``model_prev``
    unchanged. Entries where the ground truth is invalid fall back to the
    model's positions. ``use_gt`` forces the coin (per-sequence mode).
    Returns ``(positions, used_gt)``.
    """
    if use_gt is None:
        use_gt = bool(rng.random() < cfg.teacher_forcing_prob)
    if not use_gt:
        return model_prev, False
    gt = torch.as_tensor(np.array(gt_prev)) if not isinstance(gt_prev, torch.Tensor) else gt_prev
    mp = torch.as_tensor(np.array(model_prev)) if not isinstance(model_prev, torch.Tensor) else model_prev
    gt = gt.to(mp.dtype)
    if cfg.forcing_noise_std > 0:
        noise = rng.normal(0.0, cfg.forcing_noise_std, size=tuple(gt.shape))
        gt = gt + torch.as_tensor(noise, dtype=gt.dtype)
    if gt_valid is not None:
        v = gt_valid if isinstance(gt_valid, torch.Tensor) else torch.as_tensor(np.array(gt_valid))
        v = v.to(torch.bool)
        gt = torch.where(v[..., None], gt, mp)
    return gt, True


def rollout(model: PIPsUS, video: VideoSequence, points, gt: Optional[TrajectorySet] = None,
            cfg: Optional[TrainConfig] = None, rng: Optional[np.random.Generator] = None) -> torch.Tensor:
    """Track a whole clip and return all iterates ``(T, K+1, n, 2)``.

    The clip is encoded in one batch; the per-frame loop mirrors the
    streaming tracker exactly (padding with frame 0, detached history). When
    ``gt`` and ``cfg`` are given, history positions go through
    :func:`history_forcing`.
    """
    tc = model.cfg
    like = next(model.parameters())
    frames = torch.tensor(np.array(video.frames), dtype=like.dtype)
    p0 = torch.as_tensor(np.array(points.points if isinstance(points, PointSet) else points),
                         dtype=like.dtype).reshape(-1, 2)
    levels_all = model.encoder.pyramids(frames)
    maps0 = levels_all[0].detach()
    T, K = frames.shape[0], tc.K
    forcing = gt is not None and cfg is not None and cfg.teacher_forcing_prob > 0
    if forcing:
        rng = rng or np.random.default_rng(cfg.seed)
        gt_pos = torch.as_tensor(np.array(gt.positions), dtype=like.dtype).transpose(0, 1)
        gt_valid = torch.as_tensor(np.array(gt.valid)).transpose(0, 1)
        seq_coin = None if cfg.forcing_per_frame else bool(rng.random() < cfg.teacher_forcing_prob)

    lags = sorted({o for o in tc.history_offsets if o > 0} | set(range(1, tc.motion_history_len + 1)))
    own = [p0]
    preds = [torch.stack([p0] * (K + 1))]
    for t in range(1, T):
        idx = [max(t - lag, 0) for lag in lags]
        window = torch.stack([own[j] for j in idx])
        if forcing:
            forced, _ = history_forcing(gt_pos[idx], window, cfg, rng, gt_valid[idx], use_gt=seq_coin)
            # frame 0 positions are known exactly
            is_anchor = torch.tensor([j == 0 for j in idx])[:, None, None]
            window = torch.where(is_anchor, window, forced)
        by_lag = dict(zip(lags, window))
        maps, positions = [], []
        for o in tc.history_offsets:
            maps.append(maps0[0] if o == 0 else maps0[max(t - o, 0)])
            positions.append(p0 if o == 0 else by_lag[o])
        hist = model.history_features(maps, positions)
        recent = torch.stack([by_lag[m] for m in range(1, tc.motion_history_len + 1)])
        levels = [lv[t] for lv in levels_all]
        its = model.refine(hist, levels, recent, return_all=True)
        own.append(its[-1].detach())
        preds.append(torch.stack(its))
    return torch.stack(preds)


def sample_loss(model, sample: Sample, loss_cfg: LossConfig, train_cfg=None, rng=None) -> torch.Tensor:
    p0 = sample.traj.positions[:, 0]
    use_forcing = train_cfg if sample.kind != "zero" else None
    pred = rollout(model, sample.video, p0, sample.traj, use_forcing, rng)
    if sample.kind == "teacher":
        return teacher_loss(pred, sample.traj, loss_cfg)
    if sample.kind == "sim":
        return sim_loss(pred, sample.traj, loss_cfg)
    return zero_flow_loss(pred, p0, loss_cfg)


def _seed_all(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def _optimizer(model, lr: float, cfg: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=cfg.weight_decay)


def _train_pass(model, samples, opt, loss_cfg, cfg, rng, epoch, progress=None) -> float:
    model.train()
    total = 0.0
    for i, sample in enumerate(samples):
        loss = sample_loss(model, sample, loss_cfg, cfg, rng)
        if not torch.isfinite(loss):
            raise TrainingDiverged(epoch, i, loss.item())
        opt.zero_grad(set_to_none=True)
        loss.backward()
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        total += loss.item()
        if progress:
            progress(epoch, i, loss.item())
    return total / max(len(samples), 1)


@torch.no_grad()
def validate(model, samples: Sequence[Sample], loss_cfg: LossConfig) -> tuple[float, float]:
    """Mean teacher loss and mean final-iterate L2 with no history forcing."""
    model.eval()
    losses, l2 = [], []
    for s in samples:
        pred = rollout(model, s.video, s.traj.positions[:, 0])
        losses.append(float(teacher_loss(pred, s.traj, loss_cfg)))
        final = pred[:, -1].transpose(0, 1).numpy()
        err = np.linalg.norm(final - s.traj.positions, axis=-1)[:, 1:]
        valid = s.traj.valid[:, 1:]
        if valid.any():
            l2.append(float(err[valid].mean()))
    model.train()
    return float(np.mean(losses)), float(np.mean(l2)) if l2 else float("nan")


def _checkpoint(model, **meta) -> dict:
    return {
        "state_dict": copy.deepcopy({k: v.detach().clone() for k, v in model.state_dict().items()}),
        "tracker_config": asdict(model.cfg),
        **meta,
    }


def warmup(model: PIPsUS, sim_dataset: Sequence[Sample], cfg: TrainConfig = TrainConfig(),
           loss_cfg: LossConfig = LossConfig(), progress: Optional[Callable] = None) -> dict:
    """Train on simulated sequences with the L1 simulation loss."""
    if not sim_dataset:
        raise InvalidArgument("warmup needs at least one simulated sequence")
    rng = _seed_all(cfg.seed)
    opt = _optimizer(model, cfg.lr_warmup, cfg)
    rows = []
    for epoch in range(cfg.warmup_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(sim_dataset))
        loss = _train_pass(model, [sim_dataset[i] for i in order], opt, loss_cfg, cfg, rng, epoch, progress)
        rows.append({"phase": "warmup", "epoch": epoch, "train_loss": loss,
                     "val_loss": float("nan"), "val_l2": float("nan"),
                     "batches": len(order), "seconds": time.perf_counter() - t0})
        log.info("warmup epoch %d loss %.4f", epoch, loss)
    return _checkpoint(model, phase="warmup", epoch=cfg.warmup_epochs - 1, log=rows)


def epoch_schedule(n_teacher: int, n_sim: int, n_zero_source: int, cfg: TrainConfig,
                   rng: np.random.Generator, fixed_sim: Optional[np.ndarray] = None) -> list:
    """Shuffled ``(kind, index)`` batches for one main-phase epoch.

    All teacher sequences, ``round(sim_mix_fraction * n_sim)`` simulated
    ones and one static batch per ``zero_flow_every`` of those.
    """
    n_sim_sel = int(round(cfg.sim_mix_fraction * n_sim))
    if fixed_sim is not None:
        sim_idx = fixed_sim
    else:
        sim_idx = rng.choice(n_sim, size=n_sim_sel, replace=False) if n_sim_sel else np.zeros(0, int)
    batches = [("teacher", i) for i in range(n_teacher)] + [("sim", int(i)) for i in sim_idx]
    if cfg.zero_flow_every > 0 and n_zero_source > 0:
        n_zero = len(batches) // cfg.zero_flow_every
        batches += [("zero", int(i)) for i in rng.integers(0, n_zero_source, size=n_zero)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train_main(model: PIPsUS, teacher_dataset: Sequence[Sample], sim_dataset: Sequence[Sample] = (),
               zero_flow_source: Sequence[Sample] = (), cfg: TrainConfig = TrainConfig(),
               loss_cfg: LossConfig = LossConfig(), val_dataset: Sequence[Sample] = (),
               progress: Optional[Callable] = None) -> dict:
    """Teacher-student tuning; returns the checkpoint with lowest validation loss.

    Ties go to the earliest epoch. Without a validation split the training
    loss is used for selection.
    """
    if not teacher_dataset:
        raise InvalidArgument("train_main needs a non-empty teacher dataset")
    rng = _seed_all(cfg.seed + 1)
    opt = _optimizer(model, cfg.lr_main, cfg)
    pools = {"teacher": teacher_dataset, "sim": sim_dataset, "zero": zero_flow_source}
    fixed = None
    if not cfg.resample_sim_each_epoch and len(sim_dataset):
        n_sel = int(round(cfg.sim_mix_fraction * len(sim_dataset)))
        fixed = rng.choice(len(sim_dataset), size=n_sel, replace=False)
    rows, best, best_loss = [], None, float("inf")
    for epoch in range(cfg.main_epochs):
        t0 = time.perf_counter()
        sched = epoch_schedule(len(teacher_dataset), len(sim_dataset), len(zero_flow_source), cfg, rng, fixed)
        samples = [pools[k][i] for k, i in sched]
        loss = _train_pass(model, samples, opt, loss_cfg, cfg, rng, epoch, progress)
        if val_dataset:
            val_loss, val_l2 = validate(model, val_dataset, loss_cfg)
        else:
            val_loss, val_l2 = loss, float("nan")
        counts = {k: sum(1 for kk, _ in sched if kk == k) for k in KINDS}
        rows.append({"phase": "main", "epoch": epoch, "train_loss": loss, "val_loss": val_loss,
                     "val_l2": val_l2, "batches": len(sched), "seconds": time.perf_counter() - t0,
                     **{f"n_{k}": v for k, v in counts.items()}})
        log.info("main epoch %d loss %.4f val %.4f (l2 %.3f)", epoch, loss, val_loss, val_l2)
        if val_loss < best_loss:
            best_loss = val_loss
            best = _checkpoint(model, phase="main", epoch=epoch, val_loss=val_loss)
    if best is None:
        best = _checkpoint(model, phase="main", epoch=cfg.main_epochs - 1, val_loss=float("nan"))
    best["log"] = rows
    return best


def best_epoch(rows: Sequence[dict]) -> int:
    """Epoch with the minimum logged validation loss (earliest on ties)."""
    main = [r for r in rows if r["phase"] == "main"]
    return min(main, key=lambda r: (r["val_loss"], r["epoch"]))["epoch"]


def load_into(model: PIPsUS, checkpoint: dict) -> PIPsUS:
    model.load_state_dict(checkpoint["state_dict"])
    return model


LOG_FIELDS = ["phase", "epoch", "train_loss", "val_loss", "val_l2", "batches", "seconds",
              "n_teacher", "n_sim", "n_zero"]


def write_log(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, delimiter="\t", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def read_log(path) -> list:
    rows = []
    with open(path) as fh:
        for r in csv.DictReader(fh, delimiter="\t"):
            rows.append({k: (float(v) if k.endswith("loss") or k in ("val_l2", "seconds") else
                             (int(v) if v not in ("", None) and k != "phase" else v))
                         for k, v in r.items()})
    return rows
