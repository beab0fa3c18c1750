import pytest

from pipsus.config import (Config, LossConfig, SimConfig, TrackerConfig, TrainConfig, load_config, save_config,
                           with_overrides)
from pipsus.errors import FormatError, InvalidArgument, NotFound


def test_defaults():
    c = Config()
    assert (c.tracker.K, c.tracker.R, c.tracker.L) == (6, 3, 4)
    assert c.tracker.history_offsets == (0, 4, 2) and c.tracker.ring_capacity == 4
    assert (c.loss.gamma_iter, c.loss.gamma_time, c.loss.sim_gamma_time) == (0.8, 0.95, 1.0)
    assert (c.train.lr_warmup, c.train.lr_main, c.train.teacher_forcing_prob) == (5e-4, 1e-4, 0.7)
    assert c.sim.seq_len == 41 and c.sim.max_translation_per_frame == 5.0


def test_round_trip(tmp_path):
    c = Config(tracker=TrackerConfig(K=3, image_size=(64, 96)), sim=SimConfig(intensity_gain_range=(0.7, 1.3)))
    save_config(c, tmp_path / "c.ini")
    assert load_config(tmp_path / "c.ini") == c


def test_partial_file_keeps_defaults(tmp_path):
    (tmp_path / "c.ini").write_text("[train]\nmain_epochs = 3\n[detector]\nmax_points = none\n")
    c = load_config(tmp_path / "c.ini")
    assert c.train.main_epochs == 3 and c.train.warmup_epochs == 10 and c.detector.max_points is None


def test_precedence(tmp_path):
    (tmp_path / "c.ini").write_text("[sim]\nseq_len = 9\nnoise_std = 0.1\n")
    c = load_config(tmp_path / "c.ini")
    sim = with_overrides(c.sim, {"seq_len": 5, "noise_std": None})
    assert sim.seq_len == 5 and sim.noise_std == 0.1 and sim.rng_seed == 0


@pytest.mark.parametrize("text", ["[tracker]\nfoo = 1\n", "[bogus]\nx = 1\n", "[train]\nseed = abc\n",
                                  "[train]\nforcing_per_frame = maybe\n"])
def test_bad_files(tmp_path, text):
    (tmp_path / "c.ini").write_text(text)
    with pytest.raises(FormatError):
        load_config(tmp_path / "c.ini")


def test_missing_file(tmp_path):
    with pytest.raises(NotFound):
        load_config(tmp_path / "none.ini")


@pytest.mark.parametrize("make", [
    lambda: TrackerConfig(R=4), lambda: TrackerConfig(history_offsets=(4, 2)),
    lambda: TrackerConfig(embed_dim=50), lambda: TrackerConfig(encoder_stride=6),
    lambda: LossConfig(gamma_iter=0.0), lambda: SimConfig(motion_model="spin"),
    lambda: TrainConfig(teacher_forcing_prob=1.5),
])
def test_validation(make):
    with pytest.raises(InvalidArgument):
        make()
