import numpy as np
import pytest

from oracles import affine_point
from pipsus.config import SimConfig
from pipsus.datamodel import PointSet, TrajectorySet, VideoSequence, save_trajectories
from pipsus.errors import EmptyLabels, FormatError, NotFound
from pipsus.simulator import simulate_sequence, speckle_image
from pipsus.teacher import filter_teacher_labels, ingest_teacher_labels, oracle_teacher


@pytest.fixture
def seq20():
    return VideoSequence(np.zeros((20, 32, 32), np.float32))


def test_ingest_well_formed(tmp_path, seq20, rng):
    save_trajectories(TrajectorySet(rng.uniform(0, 30, (10, 20, 2)), source="teacher"), tmp_path / "l.json")
    traj = ingest_teacher_labels(seq20, tmp_path / "l.json")
    assert traj.n == 10 and traj.T == 20 and traj.source == "teacher"


def test_jump_is_filtered(tmp_path, seq20):
    pos = np.tile(np.array([10.0, 10.0]), (4, 20, 1))
    pos[2, 7:] += [300.0, 0.0]
    save_trajectories(TrajectorySet(pos), tmp_path / "l.json")
    traj = ingest_teacher_labels(seq20, tmp_path / "l.json", cap=50)
    assert traj.n == 3
    _, keep = filter_teacher_labels(TrajectorySet(pos), 50)
    assert keep.tolist() == [True, True, False, True]


def test_empty_file(tmp_path, seq20):
    (tmp_path / "l.json").write_text("")
    with pytest.raises(EmptyLabels):
        ingest_teacher_labels(seq20, tmp_path / "l.json")


def test_all_rejected(tmp_path, seq20):
    pos = np.zeros((1, 20, 2))
    pos[0, 10:] = 100.0
    save_trajectories(TrajectorySet(pos), tmp_path / "l.json")
    with pytest.raises(EmptyLabels):
        ingest_teacher_labels(seq20, tmp_path / "l.json")


def test_length_mismatch(tmp_path, seq20):
    save_trajectories(TrajectorySet(np.zeros((2, 5, 2))), tmp_path / "l.json")
    with pytest.raises(FormatError):
        ingest_teacher_labels(seq20, tmp_path / "l.json")


def test_oracle_translation_linear():
    img = speckle_image((128, 128), np.random.default_rng(0))
    pts = PointSet(np.array([[40.0, 50.0], [60.0, 70.0]]))
    mats = [np.array([[1, 0, 1.5 * t], [0, 1, 0.5 * t]]) for t in range(8)]
    seq, _, log = simulate_sequence(img, pts, SimConfig(seq_len=8), return_log=True, matrices=mats)
    traj = oracle_teacher(seq, pts, log)
    t = np.arange(8)
    for i, (x, y) in enumerate(pts.points):
        assert np.array_equal(traj.positions[i], np.stack([x + 1.5 * t, y + 0.5 * t], axis=1))


def test_oracle_zero_motion():
    img = speckle_image((64, 64), np.random.default_rng(1))
    pts = PointSet(np.array([[10.0, 12.0]]))
    seq, _, log = simulate_sequence(img, pts, SimConfig(seq_len=5, motion_model="zero"), return_log=True)
    assert np.array_equal(oracle_teacher(seq, pts, log).positions[0], np.tile(pts.points, (5, 1)))


def test_oracle_affine_composition(tmp_path):
    img = speckle_image((64, 64), np.random.default_rng(2))
    pts = PointSet(np.array([[20.0, 30.0], [33.3, 21.7]]))
    seq, _, log = simulate_sequence(img, pts, SimConfig(seq_len=10, motion_model="smooth_random_affine",
                                                        affine_jitter=0.03, rng_seed=4), return_log=True)
    log.save(tmp_path / "log.json")
    traj = oracle_teacher(seq, pts, tmp_path / "log.json")
    for t, A in enumerate(log.matrices):
        for i, (x, y) in enumerate(pts.points):
            if traj.valid[i, t]:
                assert np.allclose(traj.positions[i, t], affine_point(A, x, y), atol=1e-5)


def test_oracle_without_log(seq20):
    with pytest.raises(NotFound):
        oracle_teacher(seq20, PointSet(np.zeros((1, 2))), None)
