"""Training objectives.

Predictions are passed as an array of iterates shaped ``(T, K+1, n, 2)``:
``pred[t, k]`` is the ``k``-th estimate of the frame-``t`` positions. The
reduction is fixed as

    loss = sum_t mu_t * sum_k w_k * mean_over_valid_points(sum_xy rho(residual))

with ``rho`` the per-coordinate Huber (teacher) or absolute value
(simulation), ``w_k = gamma_iter ** (K - k)`` and
``mu_t = gamma_time ** (T - t - 1)``. Frames without any valid point
contribute nothing.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import torch
import torch.nn.functional as F

from .config import LossConfig
from .datamodel import TrajectorySet
from .errors import InvalidArgument


def _decimal_power(gamma: float, e: int) -> float:
    # rational arithmetic so that e.g. 0.8**2 comes out as the double nearest 0.64
    return float(Fraction(repr(float(gamma))) ** e)


def iteration_weights(K: int, gamma_iter: float = 0.8) -> np.ndarray:
    """Weights ``w_0 .. w_K``; the last iterate gets weight 1."""
    if K < 0:
        raise InvalidArgument("K must be >= 0")
    return np.array([_decimal_power(gamma_iter, K - k) for k in range(K + 1)])


def time_weights(T: int, gamma_time: float = 0.95) -> np.ndarray:
    """Weights ``mu_0 .. mu_{T-1}``; the last frame gets weight 1."""
    if T < 1:
        raise InvalidArgument("T must be >= 1")
    return np.array([_decimal_power(gamma_time, T - t - 1) for t in range(T)])


def huber(residual: torch.Tensor, delta: float) -> torch.Tensor:
    return F.huber_loss(residual, torch.zeros_like(residual), reduction="none", delta=delta)


def _gt_tensors(gt, like: torch.Tensor):
    if isinstance(gt, TrajectorySet):
        pos, valid = gt.positions, gt.valid
    else:
        pos, valid = gt
    pos = torch.as_tensor(np.array(pos) if not isinstance(pos, torch.Tensor) else pos)
    valid = torch.as_tensor(np.array(valid) if not isinstance(valid, torch.Tensor) else valid)
    # (n, T, 2) -> (T, n, 2)
    pos = pos.to(dtype=like.dtype, device=like.device).transpose(0, 1)
    valid = valid.to(device=like.device, dtype=torch.bool).transpose(0, 1)
    return torch.where(valid[..., None], pos, torch.zeros_like(pos)), valid


def weighted_track_loss(pred, gt, gamma_iter: float, gamma_time: float, rho) -> torch.Tensor:
    """Shared reduction for the teacher, simulation and zero-flow losses."""
    if not isinstance(pred, torch.Tensor):
        pred = torch.as_tensor(np.array(pred, dtype=np.float64))
    if pred.dim() != 4 or pred.shape[-1] != 2:
        raise InvalidArgument(f"pred must be (T, K+1, n, 2), got {tuple(pred.shape)}")
    T, K1, n, _ = pred.shape
    gt_pos, valid = _gt_tensors(gt, pred)
    if gt_pos.shape != (T, n, 2):
        raise InvalidArgument(f"gt shape {tuple(gt_pos.shape)} does not match pred {(T, n, 2)}")
    if not bool(valid.any()):
        raise InvalidArgument("ground truth has no valid entries")
    w = torch.as_tensor(iteration_weights(K1 - 1, gamma_iter), dtype=pred.dtype, device=pred.device)
    mu = torch.as_tensor(time_weights(T, gamma_time), dtype=pred.dtype, device=pred.device)

    per_coord = rho(pred - gt_pos[:, None])  # (T, K+1, n, 2)
    per_point = per_coord.sum(-1)  # (T, K+1, n)
    mask = valid[:, None, :].to(pred.dtype)
    count = valid.sum(-1).clamp(min=1).to(pred.dtype)  # (T,)
    per_frame = (per_point * mask).sum(-1) / count[:, None]  # (T, K+1)
    return (mu[:, None] * w[None, :] * per_frame).sum()


def teacher_loss(pred, gt, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return weighted_track_loss(
        pred, gt, cfg.gamma_iter, cfg.gamma_time, lambda r: huber(r, cfg.huber_delta)
    )


def sim_loss(pred, gt, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    return weighted_track_loss(pred, gt, cfg.gamma_iter, cfg.sim_gamma_time, torch.abs)


def zero_flow_loss(pred, initial_points, cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Simulation loss against trajectories that never leave ``initial_points``."""
    if not isinstance(pred, torch.Tensor):
        pred = torch.as_tensor(np.array(pred, dtype=np.float64))
    if cfg.zero_flow_weight == 0:
        return pred.sum() * 0.0
    p0 = initial_points.points if hasattr(initial_points, "points") else initial_points
    p0 = torch.as_tensor(np.array(p0) if not isinstance(p0, torch.Tensor) else p0, dtype=pred.dtype)
    T, n = pred.shape[0], pred.shape[2]
    gt = (p0[:, None, :].expand(n, T, 2), torch.ones(n, T, dtype=torch.bool))
    return cfg.zero_flow_weight * sim_loss(pred, gt, cfg)
