import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import randomize_head
from oracles import correlation_loops
from pipsus.datamodel import PointSet, VideoSequence
from pipsus.errors import InvalidArgument
from pipsus.tracker import (PIPsUS, StreamingTracker, correlation_features, init_state, load_checkpoint,
                            patch_offsets, sample_history_features, sample_point_features,
                            save_checkpoint, sinusoidal_embedding, step, track_sequence)
from pipsus.trainer import rollout


@pytest.fixture
def model(tiny_cfg):
    return PIPsUS(tiny_cfg).eval()


@pytest.fixture
def frames(rng):
    return rng.random((6, 64, 64)).astype(np.float32)


def test_patch_offsets_row_major():
    assert patch_offsets(3).tolist() == [[-1, -1], [0, -1], [1, -1], [-1, 0], [0, 0], [1, 0],
                                         [-1, 1], [0, 1], [1, 1]]


def test_init_state_padding(model, frames):
    state = init_state(model, frames[0], np.array([[10.0, 20.0], [30.0, 31.5]]))
    assert len(state.ring) == state.capacity == model.cfg.ring_capacity
    recent = state.recent(3)
    flows = model.motion_embedding(recent[0], recent)
    assert torch.equal(flows, model.motion_embedding(recent[0], torch.zeros(3, 2, 2) + recent[0]))
    assert torch.count_nonzero(recent[0][None] - recent) == 0


def test_single_point_state(model, frames):
    state = init_state(model, frames[0], PointSet(np.array([[5.0, 5.0]])))
    assert state.anchor_points.shape == (1, 2)
    p, state = step(model, state, frames[1])
    assert p.shape == (1, 2)


def test_init_rejects_bad_points(model, frames):
    with pytest.raises(InvalidArgument):
        init_state(model, frames[0], np.zeros((0, 2)))
    with pytest.raises(InvalidArgument):
        init_state(model, frames[0], np.array([[64.5, 3.0]]))


def test_history_identical_at_t1(model, frames):
    with torch.no_grad():
        state = init_state(model, frames[0], np.array([[10.0, 20.0], [40.0, 41.5]]))
        h = sample_history_features(model, state)
    assert h.shape[1] == len(model.cfg.history_offsets)
    for s in range(1, h.shape[1]):
        assert torch.equal(h[:, s], h[:, 0])


def test_ramp_sampling_is_analytic():
    h, w, stride = 16, 16, 4
    ys, xs = torch.meshgrid(torch.arange(h, dtype=torch.float64), torch.arange(w, dtype=torch.float64),
                            indexing="ij")
    fmap = torch.stack([2.0 * xs + 1.0, -0.5 * ys])
    p = torch.tensor([[13.0, 7.0], [30.2, 50.6], [0.0, 0.0]], dtype=torch.float64)
    feats = sample_point_features(fmap, p, stride)
    want = torch.stack([2.0 * p[:, 0] / stride + 1.0, -0.5 * p[:, 1] / stride], dim=1)
    assert torch.allclose(feats, want, atol=1e-5)


def test_correlation_one_hot_peak():
    C, h, w, stride = 6, 12, 12, 4
    fmap = torch.zeros(C, h, w)
    F_i = torch.zeros(C)
    F_i[2] = 1.0
    fmap[2, 5, 7] = 1.0  # level-0 cell (x=7, y=5)
    fmap[4] = 1.0  # orthogonal to F_i everywhere
    p = torch.tensor([[7.0 * stride, 5.0 * stride]])
    corr = correlation_features(F_i.reshape(1, 1, C), [fmap], p, stride, 3).reshape(9)
    assert int(torch.argmax(corr)) == 4
    assert corr[4] > 0 and torch.count_nonzero(corr) == 1


def test_correlation_zero_features(rng):
    levels = [torch.as_tensor(rng.random((4, 8, 8))), torch.as_tensor(rng.random((4, 4, 4)))]
    out = correlation_features(torch.zeros(3, 2, 4, dtype=torch.float64), levels,
                               torch.full((3, 2), 10.0, dtype=torch.float64), 4, 3)
    assert out.shape == (3, 2 * 2 * 9) and torch.count_nonzero(out) == 0


def test_correlation_matches_loops_small(rng):
    n, S, C, stride = 2, 3, 4, 4
    levels = [rng.standard_normal((C, 10, 10)), rng.standard_normal((C, 5, 5))]
    hist = rng.standard_normal((n, S, C))
    p = rng.uniform(0, 39, (n, 2))
    got = correlation_features(torch.as_tensor(hist), [torch.as_tensor(lv) for lv in levels],
                               torch.as_tensor(p), stride, 3).numpy()
    assert np.abs(got - correlation_loops(hist, levels, p, stride, 3)).max() < 1e-5


def test_embedding_static_identical():
    emb = sinusoidal_embedding(torch.zeros(4, 3, 2), 24)
    assert torch.equal(emb, emb[:1].expand(4, -1))


def test_embedding_axis_swap_distinct():
    a = torch.tensor([[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]])
    b = torch.tensor([[[0.0, 1.0], [0.0, 2.0], [0.0, 3.0]]])
    assert not torch.allclose(sinusoidal_embedding(a, 24), sinusoidal_embedding(b, 24))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=6, max_size=6))
def test_embedding_bounded(vals):
    emb = sinusoidal_embedding(torch.tensor(vals, dtype=torch.float64).reshape(1, 3, 2), 48)
    assert emb.abs().max() <= 1.0


def test_update_permutation_and_duplicates(model, rng):
    randomize_head(model)
    n, cfg = 5, model.cfg
    corr = torch.as_tensor(rng.standard_normal((n, len(cfg.history_offsets) * cfg.L * cfg.R ** 2)), dtype=torch.float32)
    motion = torch.as_tensor(rng.standard_normal((n, cfg.embed_dim)), dtype=torch.float32)
    with torch.no_grad():
        out = model.update(corr, motion)
        perm = torch.tensor([3, 0, 4, 1, 2])
        assert torch.allclose(model.update(corr[perm], motion[perm]), out[perm], atol=1e-6)
        dup = torch.tensor([0, 0, 2, 2])
        d = model.update(corr[dup], motion[dup])
    assert torch.equal(d[0], d[1]) and torch.equal(d[2], d[3])


def test_zero_head_gives_zero_update(model, rng):
    cfg = model.cfg
    corr = torch.randn(7, len(cfg.history_offsets) * cfg.L * cfg.R ** 2) * 100
    assert torch.count_nonzero(model.update(corr, torch.randn(7, cfg.embed_dim))) == 0


def test_zero_head_identity_tracker(model, frames):
    pts = np.array([[10.3, 20.7], [33.0, 41.1]])
    traj = track_sequence(model, VideoSequence(frames), pts)
    assert np.array_equal(traj.positions, np.repeat(pts[:, None], len(frames), axis=1))


def test_t1_video(model, frames):
    pts = np.array([[10.0, 20.0]])
    traj = track_sequence(model, VideoSequence(frames[:1]), pts)
    assert traj.T == 1 and np.array_equal(traj.positions[:, 0], pts)


def test_static_video_zero_head(model, frames):
    video = VideoSequence(np.repeat(frames[:1], 5, axis=0))
    pts = np.array([[12.0, 13.0], [50.0, 2.0]])
    assert np.array_equal(track_sequence(model, video, pts).positions, np.repeat(pts[:, None], 5, axis=1))


def test_state_size_constant(model, rng):
    frame = rng.random((64, 64)).astype(np.float32)
    with torch.no_grad():
        state = init_state(model, frame, np.array([[10.0, 10.0], [20.0, 30.0]]))
        sizes = []
        for t in range(1, 1001):
            _, state = step(model, state, frame)
            if t in (1, 10, 1000):
                sizes.append(state.nbytes())
    # after one step the ring still shares the frame-0 map, afterwards it is full
    assert sizes[1] == sizes[2]
    assert sizes[0] <= sizes[1]


def test_streaming_matches_rollout(model, frames):
    randomize_head(model)
    pts = np.array([[10.0, 20.0], [33.3, 41.1], [50.0, 12.0]])
    video = VideoSequence(frames)
    traj = track_sequence(model, video, pts)
    with torch.no_grad():
        batch = rollout(model, video, pts)[:, -1].transpose(0, 1).double().numpy()
    assert np.abs(traj.positions - batch).max() < 1e-4
    assert not np.allclose(traj.positions[:, -1], pts)


def test_streaming_tracker_class(model, frames):
    randomize_head(model)
    pts = np.array([[10.0, 20.0]])
    tr = StreamingTracker(model)
    rows = [tr.start(frames[0], pts)] + [tr.update(f) for f in frames[1:]]
    assert np.allclose(np.stack(rows, 1), track_sequence(model, VideoSequence(frames), pts).positions)


def test_streams_from_generator(model, frames):
    pts = np.array([[10.0, 20.0]])
    traj = track_sequence(model, (f for f in frames), pts)
    assert traj.T == len(frames)


def test_checkpoint_round_trip(tmp_path, model, frames):
    randomize_head(model)
    save_checkpoint(model, tmp_path / "m.pt", note="x")
    back, meta = load_checkpoint(tmp_path / "m.pt")
    pts = np.array([[11.0, 12.0]])
    assert meta["note"] == "x"
    assert np.array_equal(track_sequence(back, VideoSequence(frames), pts).positions,
                          track_sequence(model, VideoSequence(frames), pts).positions)


def test_frame_size_checked(model, frames):
    state = init_state(model, frames[0], np.array([[1.0, 1.0]]))
    with pytest.raises(InvalidArgument):
        step(model, state, np.zeros((32, 32), np.float32))
