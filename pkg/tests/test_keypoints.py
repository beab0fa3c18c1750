import numpy as np
import pytest

from pipsus.config import DetectorConfig
from pipsus.datamodel import PointSet, save_points
from pipsus.errors import InvalidArgument
from pipsus.keypoints import detect, filter_in_bounds, grid_points
from pipsus.simulator import speckle_image


def test_constant_image_has_no_keypoints():
    assert len(detect(np.full((128, 128), 0.5))) == 0


def test_grid_256_stride_32():
    pts = detect(np.zeros((256, 256)), DetectorConfig(detector="grid", grid_stride=32)).points
    assert len(pts) == 64
    assert set(pts[:, 0]) == set(range(16, 256, 32)) == set(pts[:, 1])


def test_grid_points_order_row_major():
    pts = grid_points(4, 6, 2)
    assert pts.tolist() == [[1, 1], [3, 1], [5, 1], [1, 3], [3, 3], [5, 3]]


def test_sift_deterministic_and_inside():
    img = speckle_image((128, 128), np.random.default_rng(5))
    cfg = DetectorConfig(contrast_threshold=0.02)
    a, b = detect(img, cfg), detect(img, cfg)
    assert len(a) > 0
    assert np.array_equal(a.points, b.points)
    assert (a.points >= 0).all() and (a.points < 128).all()
    assert len(np.unique(a.points, axis=0)) == len(a)


def test_max_points_keeps_strongest():
    img = speckle_image((128, 128), np.random.default_rng(5))
    full = detect(img, DetectorConfig(contrast_threshold=0.02))
    capped = detect(img, DetectorConfig(contrast_threshold=0.02, max_points=5))
    assert len(capped) == 5
    assert all(any(np.array_equal(p, q) for q in full.points) for p in capped.points)


def test_margin_applied():
    pts = detect(np.zeros((64, 64)), DetectorConfig(detector="grid", grid_stride=8, margin=10))
    assert (pts.points >= 10).all() and (pts.points < 54).all()


def test_manual_points(tmp_path):
    save_points(PointSet(np.array([[3.0, 4.0], [70.0, 2.0]])), tmp_path / "p.json")
    pts = detect(np.zeros((64, 64)), DetectorConfig(detector="manual", points_path=str(tmp_path / "p.json")))
    assert pts.points.tolist() == [[3.0, 4.0]]
    with pytest.raises(InvalidArgument):
        detect(np.zeros((64, 64)), DetectorConfig(detector="manual"))


def test_filter_in_bounds_cases():
    assert len(filter_in_bounds(PointSet(np.array([[0.0, 0.0]])), 32, 32, margin=4)) == 0
    inner = PointSet(np.array([[10.0, 10.0], [20.5, 5.0]]))
    assert np.array_equal(filter_in_bounds(inner, 32, 32, margin=4).points, inner.points)
    edge = PointSet(np.array([[0.0, 0.0], [31.9, 31.9], [32.0, 1.0], [-0.1, 1.0]]))
    assert filter_in_bounds(edge, 32, 32).points.tolist() == [[0.0, 0.0], [31.9, 31.9]]
