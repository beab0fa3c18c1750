"""Streaming multi-point tracker.

For each new frame the tracker starts from the previous positions (zero
motion) and applies ``K`` residual updates. Each update correlates point
features remembered from a few history frames against ``R x R`` patches of
the current feature pyramid, adds an embedding of the recent motion, and
regresses a displacement per point.

All positions are kept in image pixels; :func:`to_feature_coords` is the
single place where pixels are converted to feature-map coordinates.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import TrackerConfig
from .datamodel import PointSet, TrajectorySet, bilinear_sample
from .encoder import Encoder
from .errors import FormatError, InvalidArgument, NotFound

CHECKPOINT_MAGIC = "PIPSUS-CKPT"


def to_feature_coords(p: torch.Tensor, stride: int, level: int = 0) -> torch.Tensor:
    return p / float(stride * 2**level)


def patch_offsets(R: int, dtype=torch.float32) -> torch.Tensor:
    """``(R*R, 2)`` offsets ``(dx, dy)`` in row-major order (dy outer)."""
    r = (R - 1) // 2
    d = torch.arange(-r, r + 1, dtype=dtype)
    dy, dx = torch.meshgrid(d, d, indexing="ij")
    return torch.stack([dx.reshape(-1), dy.reshape(-1)], dim=-1)


def sample_point_features(fmap: torch.Tensor, p: torch.Tensor, stride: int) -> torch.Tensor:
    """Level-0 features ``(n, C)`` at pixel positions ``p`` ``(n, 2)``."""
    return bilinear_sample(fmap, to_feature_coords(p, stride))


def correlation_features(
    hist_feats: torch.Tensor, levels: list, p: torch.Tensor, stride: int, R: int
) -> torch.Tensor:
    """Correlate history features with ``R x R`` patches around ``p``.

    ``hist_feats`` is ``(n, S, C)`` for ``S`` history slots and ``levels`` the
    current frame's pyramid (``(C, h, w)`` per level). Returns
    ``(n, S * L * R * R)`` ordered history-major, then level, then the patch
    in row-major order. Each entry is an inner product scaled by
    ``1 / sqrt(C)``.
    """
    n, S, C = hist_feats.shape
    offsets = patch_offsets(R, p.dtype)
    out = []
    for level, fmap in enumerate(levels):
        centers = to_feature_coords(p, stride, level)
        patch = bilinear_sample(fmap, centers[:, None, :] + offsets[None])  # (n, R*R, C)
        out.append(torch.einsum("nsc,nrc->nsr", hist_feats, patch))
    corr = torch.stack(out, dim=2) / C**0.5  # (n, S, L, R*R)
    return corr.reshape(n, -1)


def sinusoidal_embedding(flows: torch.Tensor, embed_dim: int) -> torch.Tensor:
    """Embed ``(n, M, 2)`` flows into ``(n, embed_dim)`` sines and cosines.

    Each of the ``2M`` scalars gets ``F = embed_dim / (4M)`` frequencies
    ``2**-j`` (periods from about 6 px up to the image scale).
    """
    n, M, _ = flows.shape
    nfreq = embed_dim // (4 * M)
    freqs = 2.0 ** -torch.arange(nfreq, dtype=flows.dtype)
    x = flows.reshape(n, 2 * M, 1) * freqs
    return torch.cat([torch.sin(x), torch.cos(x)], dim=-1).reshape(n, -1)


class ResBlock1d(nn.Module):
    def __init__(self, dim: int):
        super().__init__()
        groups = 8 if dim % 8 == 0 else 1
        self.conv1 = nn.Conv1d(dim, dim, 3, padding=1)
        self.conv2 = nn.Conv1d(dim, dim, 3, padding=1)
        self.norm1 = nn.GroupNorm(groups, dim)
        self.norm2 = nn.GroupNorm(groups, dim)

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(x + y)


class UpdateNet(nn.Module):
    """Per-point 1-D ResNet over the history axis plus a linear head.

    The sequence axis holds one token per history slot: that slot's
    ``L * R * R`` correlations concatenated with the shared motion
    embedding. GroupNorm keeps every point independent of the others.
    """

    def __init__(self, cfg: TrackerConfig):
        super().__init__()
        self.slots = len(cfg.history_offsets)
        self.corr_dim = cfg.L * cfg.R * cfg.R
        self.proj = nn.Conv1d(self.corr_dim + cfg.embed_dim, cfg.hidden_dim, 1)
        self.blocks = nn.Sequential(*[ResBlock1d(cfg.hidden_dim) for _ in range(cfg.num_blocks)])
        self.head = nn.Linear(cfg.hidden_dim * self.slots, 2)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, corr: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        n = corr.shape[0]
        tokens = corr.reshape(n, self.slots, self.corr_dim)
        tokens = torch.cat([tokens, motion[:, None].expand(n, self.slots, -1)], dim=-1)
        x = F.relu(self.proj(tokens.transpose(1, 2)))
        x = self.blocks(x)
        return self.head(x.reshape(n, -1))


class PIPsUS(nn.Module):
    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.update = UpdateNet(cfg)

    @property
    def stride(self) -> int:
        return self.cfg.encoder_stride

    def history_features(self, hist_maps, hist_positions) -> torch.Tensor:
        """``(n, S, C)`` features sampled from each history map at its positions."""
        maps = torch.stack(list(hist_maps))
        pts = to_feature_coords(torch.stack(list(hist_positions)), self.stride)
        return bilinear_sample(maps, pts).transpose(0, 1)

    def motion_embedding(self, p: torch.Tensor, recent: torch.Tensor) -> torch.Tensor:
        """Embed the flows ``p - p_{t-1}, p - p_{t-2}, ...``; ``recent`` is ``(M, n, 2)``."""
        flows = (p[None] - recent).permute(1, 0, 2)
        return sinusoidal_embedding(flows, self.cfg.embed_dim)

    def refine(self, hist_feats, levels, recent, return_all: bool = False):
        """Run the ``K`` updates for one frame starting at ``recent[0]``.

        Returns the final ``(n, 2)`` estimate, or the list of iterates
        ``p^0 .. p^K`` when ``return_all`` is set.
        """
        p = recent[0]
        iterates = [p]
        for _ in range(self.cfg.K):
            corr = correlation_features(hist_feats, levels, p, self.stride, self.cfg.R)
            motion = self.motion_embedding(p, recent)
            p = p + self.update(corr, motion)
            iterates.append(p)
        return iterates if return_all else p


# ---------------------------------------------------------------------------
# Streaming state


@dataclass
class TrackerState:
    """Anchor frame plus a fixed-capacity ring of recent frames.

    ``ring[-1]`` is frame ``t - 1`` and ``ring[-k]`` frame ``t - k`` where
    ``t`` is the next frame to be tracked. Each entry is a
    ``(level-0 feature map, (n, 2) positions)`` pair, detached from autograd.
    """

    anchor_map: torch.Tensor
    anchor_points: torch.Tensor
    ring: deque
    t: int = 1

    @property
    def capacity(self) -> int:
        return self.ring.maxlen

    def history(self, offsets) -> tuple[list, list]:
        maps, positions = [], []
        for o in offsets:
            if o == 0:
                maps.append(self.anchor_map)
                positions.append(self.anchor_points)
            else:
                m, p = self.ring[-o]
                maps.append(m)
                positions.append(p)
        return maps, positions

    def recent(self, M: int) -> torch.Tensor:
        """``(M, n, 2)`` positions of frames ``t-1, ..., t-M``."""
        return torch.stack([self.ring[-k][1] for k in range(1, M + 1)])

    def push(self, fmap: torch.Tensor, positions: torch.Tensor) -> None:
        self.ring.append((fmap.detach(), positions.detach()))
        self.t += 1

    def nbytes(self) -> int:
        """Bytes held by distinct tensors referenced from the state."""
        seen = {}
        tensors = [self.anchor_map, self.anchor_points]
        for m, p in self.ring:
            tensors += [m, p]
        for x in tensors:
            seen[x.data_ptr()] = x.element_size() * x.nelement()
        return sum(seen.values())


def _as_tensor(x, like: torch.Tensor) -> torch.Tensor:
    if isinstance(x, PointSet):
        x = x.points
    if isinstance(x, torch.Tensor):
        return x.to(dtype=like.dtype, device=like.device)
    return torch.as_tensor(np.array(x), dtype=like.dtype, device=like.device)


def _input_points(points) -> np.ndarray:
    if isinstance(points, PointSet):
        points = points.points
    if isinstance(points, torch.Tensor):
        points = points.detach().cpu().numpy()
    return np.array(points, dtype=np.float64).reshape(-1, 2)


def _displaced(origin: np.ndarray, anchor: torch.Tensor, p: torch.Tensor) -> np.ndarray:
    """Report ``p`` as float64 input points plus the model-precision displacement.

    Keeps reported positions exact when the model does not move a point.
    """
    return origin + (p - anchor).cpu().numpy().astype(np.float64)


def _param(model: nn.Module) -> torch.Tensor:
    return next(model.parameters())


def init_state(model: PIPsUS, frame_0, points) -> TrackerState:
    """Encode frame 0 and pad the whole history with ``(frame 0, p_0)``."""
    like = _param(model)
    pts = _as_tensor(points, like).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise InvalidArgument("cannot track an empty point set")
    frame = _as_tensor(frame_0, like)
    H, W = frame.shape
    if not torch.all((pts[:, 0] >= 0) & (pts[:, 0] <= W - 1) & (pts[:, 1] >= 0) & (pts[:, 1] <= H - 1)):
        raise InvalidArgument("initial points must lie inside frame 0")
    fmap = model.encoder.feature_maps(frame[None])[0].detach()
    pts = pts.detach()
    ring = deque([(fmap, pts)] * model.cfg.ring_capacity, maxlen=model.cfg.ring_capacity)
    return TrackerState(fmap, pts, ring, t=1)


def sample_history_features(model: PIPsUS, state: TrackerState) -> torch.Tensor:
    maps, positions = state.history(model.cfg.history_offsets)
    return model.history_features(maps, positions)


def step(model: PIPsUS, state: TrackerState, frame_t, return_iterates: bool = False):
    """Track one new frame and advance ``state`` in place.

    Returns ``(p_t, state)`` or, with ``return_iterates``, ``(iterates, state)``
    where ``iterates`` is the list ``p_t^0 .. p_t^K``.
    """
    like = _param(model)
    frame = _as_tensor(frame_t, like)
    if tuple(frame.shape) != tuple(model.cfg.image_size):
        raise InvalidArgument(
            f"frame size {tuple(frame.shape)} does not match {tuple(model.cfg.image_size)}"
        )
    levels = [lv[0] for lv in model.encoder.pyramids(frame[None])]
    hist = sample_history_features(model, state)
    recent = state.recent(model.cfg.motion_history_len)
    out = model.refine(hist, levels, recent, return_all=return_iterates)
    p_t = out[-1] if return_iterates else out
    state.push(levels[0], p_t)
    return out, state


@torch.no_grad()
def track_sequence(model: PIPsUS, video, points) -> TrajectorySet:
    """Track ``points`` through ``video`` one frame at a time.

    ``video`` may be a :class:`VideoSequence` or any iterable of frames, so
    frames can be streamed from disk.
    """
    was_training = model.training
    model.eval()
    try:
        frames = iter(video)
        first = next(frames)
        state = init_state(model, first, points)
        origin = _input_points(points)
        rows = [origin]
        for frame in frames:
            p, state = step(model, state, frame)
            rows.append(_displaced(origin, state.anchor_points, p))
    finally:
        model.train(was_training)
    pos = np.stack(rows, axis=1)
    return TrajectorySet(pos, np.isfinite(pos).all(-1), "model")


class StreamingTracker:
    """``start(frame0, points)`` / ``update(frame)`` wrapper around a model."""

    name = "pipsus"

    def __init__(self, model: PIPsUS):
        self.model = model.eval()
        self.state: Optional[TrackerState] = None

    @torch.no_grad()
    def start(self, frame_0, points) -> np.ndarray:
        self.state = init_state(self.model, frame_0, points)
        self.origin = _input_points(points)
        return self.origin.copy()

    @torch.no_grad()
    def update(self, frame) -> np.ndarray:
        p, self.state = step(self.model, self.state, frame)
        return _displaced(self.origin, self.state.anchor_points, p)

    def track(self, video, points) -> TrajectorySet:
        return track_sequence(self.model, video, points)


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: PIPsUS, path, **meta) -> None:
    from dataclasses import asdict

    torch.save(
        {
            "magic": CHECKPOINT_MAGIC,
            "tracker_config": asdict(model.cfg),
            "state_dict": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
            "meta": meta,
        },
        path,
    )


def load_checkpoint(path) -> tuple[PIPsUS, dict]:
    from .config import _build

    path = Path(path)
    if not path.exists():
        raise NotFound(f"checkpoint not found: {path}")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("magic") != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a tracker checkpoint")
    model = PIPsUS(_build(TrackerConfig, blob["tracker_config"]))
    model.load_state_dict(blob["state_dict"])
    return model, blob.get("meta", {})
