import numpy as np
import pytest
import torch

from pipsus.config import TrackerConfig
from pipsus.encoder import Encoder, load_pretrained, save_weights
from pipsus.errors import InvalidArgument, WeightsError


def test_pyramid_shapes_full_size():
    cfg = TrackerConfig()
    enc = Encoder(cfg).eval()
    with torch.no_grad():
        pyr = enc.encode(np.zeros((256, 256), np.float32))
    assert [tuple(lv.shape) for lv in pyr.levels] == [(128, 32, 32), (128, 16, 16), (128, 8, 8), (128, 4, 4)]
    assert pyr.level_stride(3) == 64


def test_deterministic_in_eval(tiny_cfg, rng):
    enc = Encoder(tiny_cfg).eval()
    frame = rng.random((64, 64)).astype(np.float32)
    with torch.no_grad():
        a, b = enc.encode(frame), enc.encode(frame.copy())
    assert all(torch.equal(x, y) for x, y in zip(a.levels, b.levels))


def test_input_sensitive(tiny_cfg):
    enc = Encoder(tiny_cfg).eval()
    with torch.no_grad():
        z = enc.encode(np.zeros((64, 64), np.float32)).levels[0]
        o = enc.encode(np.ones((64, 64), np.float32)).levels[0]
    assert not torch.allclose(z, o)


def test_wrong_size_rejected(tiny_cfg):
    with pytest.raises(InvalidArgument):
        Encoder(tiny_cfg).encode(np.zeros((32, 64), np.float32))


def test_weights_round_trip(tmp_path, tiny_cfg, rng):
    src, dst = Encoder(tiny_cfg).eval(), Encoder(tiny_cfg).eval()
    with torch.no_grad():
        for p in src.parameters():
            p.add_(0.1)
    frame = rng.random((64, 64)).astype(np.float32)
    with torch.no_grad():
        before = dst.encode(frame).levels[0]
    save_weights(src, tmp_path / "w.pt")
    n_params = sum(p.numel() for p in dst.parameters())
    load_pretrained(dst, tmp_path / "w.pt")
    assert sum(p.numel() for p in dst.parameters()) == n_params
    with torch.no_grad():
        after = dst.encode(frame).levels[0]
        ref = src.encode(frame).levels[0]
    assert torch.equal(after, ref) and not torch.allclose(after, before)


def test_truncated_weights(tmp_path, tiny_cfg):
    save_weights(Encoder(tiny_cfg), tmp_path / "w.pt")
    data = (tmp_path / "w.pt").read_bytes()
    (tmp_path / "w.pt").write_bytes(data[: len(data) // 2])
    with pytest.raises(WeightsError):
        load_pretrained(Encoder(tiny_cfg), tmp_path / "w.pt")


def test_mismatched_architecture(tmp_path, tiny_cfg):
    save_weights(Encoder(tiny_cfg), tmp_path / "w.pt")
    import dataclasses

    other = dataclasses.replace(tiny_cfg, feature_dim=16)
    with pytest.raises(WeightsError, match="shape_mismatch"):
        load_pretrained(Encoder(other), tmp_path / "w.pt")
