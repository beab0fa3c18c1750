"""Hyperparameter containers and the INI-style config file.

Defaults follow the published training recipe where one exists; the rest
are engineering choices and are all overridable from the config file or
command-line flags (precedence: defaults < file < flags).
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import FormatError, InvalidArgument

MOTION_MODELS = ("per_frame_random_translation", "smooth_random_affine", "zero")
DETECTORS = ("sift", "grid", "manual")


@dataclass(frozen=True)
class TrackerConfig:
    """Architecture of the streaming tracker.

    ``history_offsets`` lists the frames whose features are correlated
    against the current frame: ``0`` is the anchor (first) frame and a
    positive ``k`` means frame ``t - k``.
    """

    K: int = 6
    R: int = 3
    L: int = 4
    history_offsets: tuple[int, ...] = (0, 4, 2)
    motion_history_len: int = 3
    embed_dim: int = 96
    encoder_stride: int = 8
    feature_dim: int = 128
    encoder_width: int = 64
    image_size: tuple[int, int] = (256, 256)
    hidden_dim: int = 256
    num_blocks: int = 8
    normalize_features: bool = False

    def __post_init__(self):
        if self.K < 1:
            raise InvalidArgument(f"K must be >= 1, got {self.K}")
        if self.R < 1 or self.R % 2 == 0:
            raise InvalidArgument(f"R must be odd and >= 1, got {self.R}")
        if self.L < 1:
            raise InvalidArgument(f"L must be >= 1, got {self.L}")
        if 0 not in self.history_offsets:
            raise InvalidArgument("history_offsets must include the anchor frame 0")
        if any(o < 0 for o in self.history_offsets):
            raise InvalidArgument("history_offsets must be non-negative")
        if self.motion_history_len < 1:
            raise InvalidArgument("motion_history_len must be >= 1")
        if self.embed_dim % (4 * self.motion_history_len) != 0:
            raise InvalidArgument(
                f"embed_dim must be a multiple of {4 * self.motion_history_len}"
            )
        s = self.encoder_stride
        if s < 2 or s & (s - 1):
            raise InvalidArgument(f"encoder_stride must be a power of two >= 2, got {s}")

    @property
    def ring_capacity(self) -> int:
        return max(max(self.history_offsets), self.motion_history_len)


@dataclass(frozen=True)
class LossConfig:
    gamma_iter: float = 0.8
    gamma_time: float = 0.95
    sim_gamma_time: float = 1.0
    huber_delta: float = 6.0
    zero_flow_weight: float = 1.0

    def __post_init__(self):
        for name in ("gamma_iter", "gamma_time", "sim_gamma_time"):
            g = getattr(self, name)
            if not 0.0 < g <= 1.0:
                raise InvalidArgument(f"{name} must be in (0, 1], got {g}")
        if self.huber_delta <= 0:
            raise InvalidArgument("huber_delta must be positive")
        if self.zero_flow_weight < 0:
            raise InvalidArgument("zero_flow_weight must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    seq_len: int = 41
    max_translation_per_frame: float = 5.0
    intensity_gain_range: tuple[float, float] = (0.8, 1.2)
    intensity_bias_range: tuple[float, float] = (-0.05, 0.05)
    noise_std: float = 0.02
    motion_model: str = "per_frame_random_translation"
    smoothness: float = 0.8
    # per-frame std of the linear-part increments for smooth_random_affine
    affine_jitter: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if self.seq_len < 1:
            raise InvalidArgument("seq_len must be >= 1")
        if self.noise_std < 0:
            raise InvalidArgument("noise_std must be >= 0")
        lo, hi = self.intensity_gain_range
        if lo <= 0 or hi < lo:
            raise InvalidArgument(f"gain range must be positive and ordered, got {lo, hi}")
        lo, hi = self.intensity_bias_range
        if hi < lo:
            raise InvalidArgument("bias range must be ordered")
        if self.motion_model not in MOTION_MODELS:
            raise InvalidArgument(f"unknown motion_model {self.motion_model!r}")
        if not 0.0 <= self.smoothness < 1.0:
            raise InvalidArgument("smoothness must be in [0, 1)")
        if self.max_translation_per_frame < 0:
            raise InvalidArgument("max_translation_per_frame must be >= 0")


@dataclass(frozen=True)
class DetectorConfig:
    detector: str = "sift"
    contrast_threshold: float = 0.08
    edge_threshold: float = 4.0
    max_points: Optional[int] = None
    grid_stride: int = 32
    margin: float = 0.0
    points_path: Optional[str] = None

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise InvalidArgument(f"unknown detector {self.detector!r}")
        if self.contrast_threshold <= 0 or self.edge_threshold <= 0:
            raise InvalidArgument("detector thresholds must be positive")
        if self.grid_stride < 1:
            raise InvalidArgument("grid_stride must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 10
    main_epochs: int = 50
    lr_warmup: float = 5e-4
    lr_main: float = 1e-4
    weight_decay: float = 1e-4
    sim_mix_fraction: float = 0.5
    resample_sim_each_epoch: bool = True
    teacher_forcing_prob: float = 0.7
    forcing_noise_std: float = 1.0
    forcing_per_frame: bool = True
    zero_flow_every: int = 10
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("sim_mix_fraction", "teacher_forcing_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise InvalidArgument(f"{name} must be in [0, 1], got {p}")
        if self.lr_warmup < 0 or self.lr_main < 0:
            raise InvalidArgument("learning rates must be non-negative")
        if self.forcing_noise_std < 0:
            raise InvalidArgument("forcing_noise_std must be >= 0")
        if self.zero_flow_every < 0:
            raise InvalidArgument("zero_flow_every must be >= 0")


SECTIONS = {
    "tracker": TrackerConfig,
    "loss": LossConfig,
    "sim": SimConfig,
    "detector": DetectorConfig,
    "train": TrainConfig,
}


@dataclass
class Config:
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        return cls(**{name: _build(SECTIONS[name], d.get(name, {})) for name in SECTIONS})


def _build(cls, values: dict):
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for key, value in values.items():
        if key not in hints:
            raise FormatError(f"unknown key {key!r} for {cls.__name__}")
        kwargs[key] = _coerce(hints[key], value)
    return cls(**kwargs)


def _coerce(tp, value):
    """Convert ``value`` (possibly a config-file string) to type ``tp``."""
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
            return None
        return _coerce(next(a for a in args if a is not type(None)), value)
    if origin is tuple:
        if isinstance(value, str):
            value = [v for v in value.replace("(", "").replace(")", "").split(",") if v.strip()]
        inner = args[0]
        return tuple(_coerce(inner, v) for v in value)
    if tp is bool:
        if isinstance(value, str):
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise FormatError(f"cannot parse boolean from {value!r}")
        return bool(value)
    try:
        if tp is int:
            return int(value.strip()) if isinstance(value, str) else int(value)
        if tp is float:
            return float(value)
    except ValueError as exc:
        raise FormatError(f"cannot parse {tp.__name__} from {value!r}") from exc
    if tp is str:
        return str(value).strip()
    return value


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def load_config(path) -> Config:
    """Read an INI config file; missing keys keep their defaults."""
    path = Path(path)
    if not path.exists():
        from .errors import NotFound

        raise NotFound(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise FormatError(f"{path}: unknown sections {sorted(unknown)}")
    return Config.from_dict({s: dict(parser[s]) for s in parser.sections()})


def save_config(cfg: Config, path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for name in SECTIONS:
        section = getattr(cfg, name)
        parser[name] = {f.name: _format(getattr(section, f.name)) for f in fields(section)}
    with open(path, "w") as fh:
        parser.write(fh)


def with_overrides(section, overrides: dict):
    """Return ``section`` with non-None ``overrides`` applied (flags beat file)."""
    hints = typing.get_type_hints(type(section))
    changes = {k: _coerce(hints[k], v) for k, v in overrides.items() if v is not None}
    return dataclasses.replace(section, **changes) if changes else section
