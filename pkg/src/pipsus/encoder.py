"""Residual CNN feature encoder and multi-resolution feature pyramid."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import TrackerConfig
from .errors import InvalidArgument, WeightsError

WEIGHTS_MAGIC = "PIPSUS-ENCODER"


@dataclass
class FeaturePyramid:
    """``levels[l]`` is a ``(C, h_l, w_l)`` map at pixel stride ``stride * 2**l``."""

    levels: list
    stride: int
    frame_index: int = 0

    @property
    def L(self) -> int:
        return len(self.levels)

    def level_stride(self, level: int) -> int:
        return self.stride * 2**level


class ResidualBlock(nn.Module):
    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(planes, planes, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(planes)
        self.norm2 = nn.InstanceNorm2d(planes)
        self.relu = nn.ReLU(inplace=True)
        if stride == 1 and in_planes == planes:
            self.downsample = None
        else:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_planes, planes, 1, stride=stride), nn.InstanceNorm2d(planes)
            )

    def forward(self, x):
        y = self.relu(self.norm1(self.conv1(x)))
        y = self.relu(self.norm2(self.conv2(y)))
        if self.downsample is not None:
            x = self.downsample(x)
        return self.relu(x + y)


class BasicEncoder(nn.Module):
    """Grayscale frame -> stride-``s`` dense feature map with ``C`` channels.

    A 7x7 stride-2 stem is followed by residual stages; every stage output is
    resized to the final resolution and fused by two convolutions, so the
    map mixes fine and coarse context.
    """

    def __init__(self, cfg: TrackerConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.encoder_width
        n_down = int(math.log2(cfg.encoder_stride)) - 1
        self.stem = nn.Sequential(
            nn.Conv2d(1, w, 7, stride=2, padding=3), nn.InstanceNorm2d(w), nn.ReLU(inplace=True)
        )
        widths = [w] + [int(w * (1 + 0.5 * (i + 1))) for i in range(n_down)]
        strides = [1] + [2] * n_down
        stages = []
        in_planes = w
        for planes, stride in zip(widths, strides):
            stages.append(nn.Sequential(ResidualBlock(in_planes, planes, stride), ResidualBlock(planes, planes)))
            in_planes = planes
        self.stages = nn.ModuleList(stages)
        self.fuse = nn.Sequential(
            nn.Conv2d(sum(widths), cfg.feature_dim * 2, 3, padding=1),
            nn.InstanceNorm2d(cfg.feature_dim * 2),
            nn.ReLU(inplace=True),
            nn.Conv2d(cfg.feature_dim * 2, cfg.feature_dim, 1),
        )

    def forward(self, x):
        """``x``: ``(B, H, W)`` or ``(B, 1, H, W)`` intensities in [0, 1]."""
        if x.dim() == 3:
            x = x[:, None]
        x = 2.0 * x - 1.0
        x = self.stem(x)
        outs = []
        for stage in self.stages:
            x = stage(x)
            outs.append(x)
        size = outs[-1].shape[-2:]
        outs = [o if o.shape[-2:] == size else F.interpolate(o, size=size, mode="bilinear", align_corners=False) for o in outs]
        return self.fuse(torch.cat(outs, dim=1))


def build_pyramid(base: torch.Tensor, L: int) -> list:
    """Level 0 is ``base``; each further level is a 2x average pool (floor)."""
    levels = [base]
    for _ in range(L - 1):
        levels.append(F.avg_pool2d(levels[-1], 2, stride=2))
    return levels


class Encoder(nn.Module):
    def __init__(self, cfg: TrackerConfig):
        super().__init__()
        self.cfg = cfg
        self.net = BasicEncoder(cfg)

    def feature_maps(self, frames: torch.Tensor) -> torch.Tensor:
        """Batched level-0 maps ``(B, C, h, w)`` for ``(B, H, W)`` frames."""
        H, W = frames.shape[-2:]
        if (H, W) != tuple(self.cfg.image_size):
            raise InvalidArgument(
                f"frame size {(H, W)} does not match configured {tuple(self.cfg.image_size)}"
            )
        fmap = self.net(frames)
        if self.cfg.normalize_features:
            fmap = F.normalize(fmap, dim=1)
        return fmap

    def pyramids(self, frames: torch.Tensor) -> list:
        """Per-level batched maps: ``[(B, C, h_l, w_l) for l in range(L)]``."""
        return build_pyramid(self.feature_maps(frames), self.cfg.L)

    def encode(self, frame, frame_index: int = 0) -> FeaturePyramid:
        """Encode a single ``(H, W)`` frame into a :class:`FeaturePyramid`."""
        param = next(self.parameters())
        x = torch.as_tensor(np.array(frame) if not isinstance(frame, torch.Tensor) else frame)
        x = x.to(dtype=param.dtype, device=param.device)
        if x.dim() != 2:
            raise InvalidArgument(f"encode expects one (H, W) frame, got {tuple(x.shape)}")
        levels = self.pyramids(x[None])
        return FeaturePyramid([lv[0] for lv in levels], self.cfg.encoder_stride, frame_index)


# ---------------------------------------------------------------------------
# Weight containers


def _manifest(state: dict) -> dict:
    return {k: list(v.shape) for k, v in state.items()}


def _checksum(state: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(state):
        h.update(k.encode())
        h.update(state[k].detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_weights(encoder: nn.Module, path) -> None:
    state = {k: v.detach().cpu().clone() for k, v in encoder.state_dict().items()}
    torch.save(
        {
            "magic": WEIGHTS_MAGIC,
            "manifest": _manifest(state),
            "checksum": _checksum(state),
            "state_dict": state,
        },
        path,
    )


def load_pretrained(encoder: nn.Module, weights_path) -> None:
    """Overwrite all encoder parameters after checking the container manifest."""
    path = Path(weights_path)
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises a variety of types on corrupt files
        raise WeightsError(f"cannot read weights from {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("magic") != WEIGHTS_MAGIC:
        raise WeightsError(f"{path}: not an encoder weight container")
    state, manifest = blob["state_dict"], blob["manifest"]
    if _manifest(state) != manifest:
        raise WeightsError(f"{path}: manifest does not describe the stored tensors")
    if _checksum(state) != blob["checksum"]:
        raise WeightsError(f"{path}: checksum mismatch")
    expected = _manifest(encoder.state_dict())
    missing = sorted(set(expected) - set(manifest))
    unexpected = sorted(set(manifest) - set(expected))
    mismatched = sorted(k for k in set(expected) & set(manifest) if expected[k] != manifest[k])
    if missing or unexpected or mismatched:
        raise WeightsError(
            "weights do not match the encoder: "
            f"missing={missing} unexpected={unexpected} shape_mismatch={mismatched}"
        )
    encoder.load_state_dict(state)
