"""Tests for exact nearest-neighbor queries."""
import numpy as np
import pytest

from overlap_registration.errors import EmptyTargetError
from overlap_registration.geometry import PointCloud
from overlap_registration.spatial_index import build_index, nearest


def test_empty_target_raises():
    with pytest.raises(EmptyTargetError):
        build_index(PointCloud(np.empty((0, 3))))


def test_mask_selecting_nothing_raises():
    cloud = PointCloud(np.eye(3))
    with pytest.raises(EmptyTargetError):
        build_index(cloud, np.zeros(3, dtype=bool))


def test_single_point_target():
    index = build_index(PointCloud([[1.0, 2.0, 3.0]]))
    assert nearest(index, [0.0, 0.0, 0.0]) == (0, pytest.approx(np.sqrt(14.0)))


def test_exact_match_has_zero_distance():
    cloud = PointCloud(np.random.default_rng(0).normal(size=(100, 3)))
    index = build_index(cloud)
    assert nearest(index, cloud.points[42]) == (42, 0.0)


def test_matches_brute_force():
    """Every query agrees with an exhaustive scan."""
    rng = np.random.default_rng(1)
    cloud = PointCloud(rng.normal(size=(500, 3)))
    queries = rng.normal(size=(200, 3))
    indices, distances = build_index(cloud).query(queries)
    brute = np.linalg.norm(queries[:, None, :] - cloud.points[None, :, :], axis=2)
    assert np.array_equal(indices, brute.argmin(axis=1))
    assert np.allclose(distances, brute.min(axis=1), atol=1e-12)


def test_ties_resolve_to_lowest_index():
    """Equidistant points go to the lowest index, whatever the tree layout."""
    cloud = PointCloud([[5.0, 5.0, 5.0], [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert nearest(build_index(cloud), [0.0, 0.0, 0.0])[0] == 1


def test_tie_between_points_2_and_7_picks_2():
    points = np.full((10, 3), 5.0) + np.arange(10.0)[:, None]
    points[2] = [1.0, 0.0, 0.0]
    points[7] = [0.0, 0.0, -1.0]
    index = build_index(PointCloud(points))
    assert nearest(index, [0.0, 0.0, 0.0]) == (2, 1.0)


def test_duplicate_points_resolve_to_lowest_index():
    cloud = PointCloud([[9.0, 9.0, 9.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
    assert nearest(build_index(cloud), [1.0, 1.0, 1.1])[0] == 1


def test_masked_index_reports_original_indices():
    cloud = PointCloud(np.arange(15.0).reshape(5, 3))
    mask = np.array([False, False, True, False, True])
    index = build_index(cloud, mask)
    assert len(index) == 2
    assert nearest(index, cloud.points[0])[0] == 2
    assert nearest(index, cloud.points[4])[0] == 4


def test_parallel_query_matches_serial():
    rng = np.random.default_rng(2)
    index = build_index(PointCloud(rng.normal(size=(1000, 3))))
    queries = rng.normal(size=(300, 3))
    serial = index.query(queries, workers=1)
    parallel = index.query(queries, workers=4)
    assert np.array_equal(serial[0], parallel[0])
    assert np.array_equal(serial[1], parallel[1])
