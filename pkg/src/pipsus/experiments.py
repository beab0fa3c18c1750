"""Desk-scale synthetic experiment: build data, train both phases, evaluate.

Used by ``scripts/toy_experiment.py`` and the acceptance tests. Everything
is seeded, so two runs with the same :class:`ToySetup` agree exactly.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .baselines import NCCTracker, ZeroMotionTracker
from .config import LossConfig, SimConfig, TrackerConfig, TrainConfig
from .datamodel import PointSet
from .metrics import drift_curve, l2_error
from .simulator import simulate_sequence, speckle_image
from .teacher import oracle_teacher
from .tracker import PIPsUS, track_sequence
from .trainer import Sample, load_into, train_main, warmup, zero_flow_samples

log = logging.getLogger(__name__)

TOY_TRACKER = TrackerConfig(
    K=4, R=3, L=3, embed_dim=48, encoder_stride=4, feature_dim=32, encoder_width=16,
    image_size=(64, 64), hidden_dim=64, num_blocks=2,
)


@dataclass(frozen=True)
class ToySetup:
    tracker: TrackerConfig = TOY_TRACKER
    n_train: int = 200
    n_val: int = 20
    n_test: int = 20
    n_zero: int = 20
    points_per_seq: int = 16
    train_len: int = 10
    test_len: int = 20
    margin: float = 8.0
    max_motion: float = 5.0
    gain_range: tuple = (0.7, 1.3)
    bias_range: tuple = (-0.05, 0.05)
    noise_std: float = 0.02
    train: TrainConfig = TrainConfig(warmup_epochs=10, main_epochs=10)
    loss: LossConfig = LossConfig()
    seed: int = 0


def _points(rng, size, n, margin) -> PointSet:
    H, W = size
    return PointSet(np.stack([rng.uniform(margin, W - 1 - margin, n),
                              rng.uniform(margin, H - 1 - margin, n)], axis=1))


def make_split(setup: ToySetup, n: int, seq_len: int, motion: str, seed: int, kind: str) -> list:
    """``n`` simulated samples; teacher samples get oracle-teacher labels."""
    rng = np.random.default_rng(seed)
    size = setup.tracker.image_size
    out = []
    for i in range(n):
        img = speckle_image(size, rng)
        pts = _points(rng, size, setup.points_per_seq, setup.margin)
        cfg = SimConfig(seq_len=seq_len, max_translation_per_frame=setup.max_motion,
                        intensity_gain_range=setup.gain_range, intensity_bias_range=setup.bias_range,
                        noise_std=setup.noise_std, motion_model=motion,
                        rng_seed=int(rng.integers(2**31)))
        seq, traj, simlog = simulate_sequence(img, pts, cfg, seq_id=f"{kind}{i:04d}", return_log=True)
        if kind == "teacher":
            traj = oracle_teacher(seq, pts, simlog)
        out.append(Sample(seq, traj, kind))
    return out


@dataclass
class ToyData:
    sim: list
    teacher: list
    val: list
    test: list
    zero: list


def make_toy_data(setup: ToySetup) -> ToyData:
    s = setup.seed * 1000
    sim = make_split(setup, setup.n_train, setup.train_len, "per_frame_random_translation", s + 1, "sim")
    teacher = make_split(setup, setup.n_train, setup.train_len, "smooth_random_affine", s + 2, "teacher")
    val = make_split(setup, setup.n_val, setup.train_len, "smooth_random_affine", s + 3, "teacher")
    test = make_split(setup, setup.n_test, setup.test_len, "smooth_random_affine", s + 4, "teacher")
    rng = np.random.default_rng(s + 5)
    frames = [speckle_image(setup.tracker.image_size, rng) for _ in range(setup.n_zero)]
    pts = [_points(rng, setup.tracker.image_size, setup.points_per_seq, setup.margin) for _ in frames]
    zero = zero_flow_samples(frames, pts, setup.train_len)
    return ToyData(sim, teacher, val, test, zero)


@dataclass
class ToyResult:
    model: PIPsUS
    warmup_log: list
    main_log: list
    best_epoch: int
    metrics: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    seconds: float = 0.0


def train_toy(setup: ToySetup, data: ToyData, progress=None) -> ToyResult:
    t0 = time.perf_counter()
    torch.manual_seed(setup.seed)
    model = PIPsUS(setup.tracker)
    wu = warmup(model, data.sim, setup.train, setup.loss, progress)
    best = train_main(model, data.teacher, data.sim, data.zero, setup.train, setup.loss,
                      val_dataset=data.val, progress=progress)
    load_into(model, best)
    return ToyResult(model, wu["log"], best["log"], best["epoch"], seconds=time.perf_counter() - t0)


def evaluate_methods(model: PIPsUS, samples: list, ncc_kwargs=None) -> tuple[dict, dict]:
    """Mean L2 and drift curves of the tracker, NCC and zero motion on ``samples``."""
    ncc_kwargs = ncc_kwargs or {}
    methods = {
        "pipsus": lambda s: track_sequence(model, s.video, s.traj.positions[:, 0]),
        "ncc": lambda s: NCCTracker(**ncc_kwargs).track(s.video, s.traj.positions[:, 0]),
        "zero": lambda s: ZeroMotionTracker().track(s.video, s.traj.positions[:, 0]),
    }
    metrics, curves = {}, {}
    for name, run in methods.items():
        preds = [run(s) for s in samples]
        gts = [s.traj for s in samples]
        errs = np.concatenate([l2_error(p, g)[0][:, 1:].ravel() for p, g in zip(preds, gts)])
        errs = errs[~np.isnan(errs)]
        metrics[name] = {"l2_mean": float(errs.mean()), "l2_std": float(errs.std())}
        curves[name] = drift_curve(preds, gts)
    return metrics, curves


def run_toy(setup: ToySetup = ToySetup(), progress=None) -> ToyResult:
    data = make_toy_data(setup)
    result = train_toy(setup, data, progress)
    result.metrics, result.curves = evaluate_methods(result.model, data.test)
    return result
