"""Tests for field-of-view penalties and overlap weights."""
import math
import os

import numpy as np
import pytest

from overlap_registration.eoe import (
    OverlapWeights,
    PenaltyConstants,
    calc_omega_weights,
    fov_penalties,
    weight_timing_probe,
)
from overlap_registration.errors import GeometryError
from overlap_registration.geometry import PointCloud, RigidTransform, SensorFov, transform_compose


def frustum_oracle(local, fov):
    """Membership by direct angle tests: azimuth, elevation and range."""
    distance = np.linalg.norm(local, axis=1)
    azimuth = np.arctan2(local[:, 1], local[:, 0])
    elevation = np.arcsin(np.clip(local[:, 2] / distance, -1.0, 1.0))
    in_range = (distance >= fov.psi_min) & (distance <= fov.psi_max)
    return in_range & (np.abs(azimuth) <= fov.psi_x / 2.0) & (np.abs(elevation) <= fov.psi_y / 2.0)


def random_fov(rng):
    psi_min = float(rng.uniform(0.0, 2.0))
    return SensorFov.from_degrees(
        float(rng.uniform(10.0, 360.0)), float(rng.uniform(10.0, 180.0)),
        psi_min=psi_min, psi_max=psi_min + float(rng.uniform(1.0, 20.0)),
    )


def local_points(cloud, pose):
    return np.einsum('ji,nj->ni', pose.rotation, cloud.points - pose.translation)


def test_penalty_constants_validation():
    with pytest.raises(GeometryError):
        PenaltyConstants(k0=0.0)
    with pytest.raises(GeometryError):
        PenaltyConstants(k1=1.5)
    with pytest.raises(GeometryError):
        PenaltyConstants(k2=-1.0)
    assert PenaltyConstants.from_dict({'k2': 8}) == PenaltyConstants(k2=8.0)


@pytest.mark.parametrize('corrected', [True, False], ids=['corrected', 'verbatim'])
def test_zero_penalty_matches_frustum_oracle(corrected):
    """(ξ = 0) agrees with direct frustum membership over random sensors and poses."""
    rng = np.random.default_rng(0)
    cloud = PointCloud(rng.uniform(-10.0, 10.0, size=(10000, 3)))
    penalties = PenaltyConstants(k0=1.0, k1=0.8, k2=5.0)
    for _ in range(100):
        fov = random_fov(rng)
        pose = RigidTransform.from_rotvec(rng.normal(size=3), rng.uniform(-3.0, 3.0, size=3))
        weights = calc_omega_weights(cloud, pose, fov, penalties, corrected_vertical=corrected)
        inside = frustum_oracle(local_points(cloud, pose), fov)
        assert np.array_equal(weights.penalties == 0.0, inside)
        xi = weights.penalties
        assert np.all(weights.weights[inside] == 1.0)
        expected = penalties.k1 * np.exp(-penalties.k2 * xi[~inside])
        assert np.allclose(weights.weights[~inside], expected, rtol=0.0, atol=1e-12)


def test_full_sphere_weights_are_all_one():
    rng = np.random.default_rng(1)
    cloud = PointCloud(np.vstack([np.zeros((1, 3)), rng.normal(scale=100.0, size=(500, 3))]))
    pose = RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3))
    weights = calc_omega_weights(cloud, pose, SensorFov.full_sphere())
    assert np.all(weights.weights == 1.0)
    assert np.all(weights.penalties == 0.0)
    assert weights.stats().fraction_downweighted == 0.0


def test_point_at_sensor_origin_gets_range_penalty():
    fov = SensorFov.from_degrees(360.0, 180.0, psi_max=10.0)
    xi = fov_penalties(np.zeros((1, 3)), fov, k0=2.0)
    assert xi[0] == 2.0


def test_range_violation_adds_k0():
    fov = SensorFov.from_degrees(60.0, 60.0, psi_min=1.0, psi_max=5.0)
    xi = fov_penalties(np.array([[0.5, 0.0, 0.0], [3.0, 0.0, 0.0], [9.0, 0.0, 0.0]]), fov, k0=1.5)
    assert np.array_equal(xi, [1.5, 0.0, 1.5])


def test_horizontal_excess_is_angular_distance_to_edge():
    fov = SensorFov.from_degrees(60.0, 180.0)
    left = [math.cos(math.radians(40.0)), math.sin(math.radians(40.0)), 0.0]
    right = [math.cos(math.radians(-45.0)), math.sin(math.radians(-45.0)), 0.0]
    xi = fov_penalties(np.array([left, right]), fov, k0=1.0)
    assert xi == pytest.approx([math.radians(10.0), math.radians(15.0)])


def test_lower_vertical_term_variants():
    """Above the frustum the published term overshoots; the corrected one measures the excess."""
    fov = SensorFov.from_degrees(360.0, 60.0)
    above = np.array([[math.cos(math.radians(40.0)), 0.0, math.sin(math.radians(40.0))]])
    corrected = fov_penalties(above, fov, k0=1.0, corrected_vertical=True)
    verbatim = fov_penalties(above, fov, k0=1.0)
    assert corrected[0] == pytest.approx(math.radians(10.0))
    assert verbatim[0] == pytest.approx(math.radians(70.0))


def test_upper_vertical_term():
    fov = SensorFov.from_degrees(360.0, 60.0)
    below = np.array([[math.cos(math.radians(-50.0)), 0.0, math.sin(math.radians(-50.0))]])
    assert fov_penalties(below, fov, k0=1.0)[0] == pytest.approx(math.radians(20.0))


def test_weight_is_k1_exp_minus_k2_xi_past_the_horizontal_edge():
    fov = SensorFov.from_degrees(60.0, 180.0)
    penalties = PenaltyConstants(k0=1.0, k1=0.7, k2=4.0)
    azimuth = np.radians(np.linspace(30.5, 179.5, 50))
    cloud = PointCloud(np.column_stack([np.cos(azimuth), np.sin(azimuth), np.zeros(50)]))
    weights = calc_omega_weights(cloud, RigidTransform.identity(), fov, penalties)
    xi = azimuth - np.radians(30.0)
    assert np.allclose(weights.weights, 0.7 * np.exp(-4.0 * xi), rtol=0.0, atol=1e-12)


def test_weight_decays_moving_away_from_the_frustum():
    fov = SensorFov.from_degrees(60.0, 40.0, psi_min=0.5, psi_max=5.0)
    sweeps = [([0.0, 1.0, 0.0], 35.0, 175.0), ([0.0, -1.0, 0.0], 35.0, 175.0),
              ([0.0, 0.0, 1.0], 25.0, 89.0), ([0.0, 0.0, -1.0], 25.0, 89.0)]
    for direction, start, stop in sweeps:
        angles = np.radians(np.linspace(start, stop, 60))
        rays = np.outer(np.cos(angles), [1.0, 0.0, 0.0]) + np.outer(np.sin(angles), direction)
        weights = calc_omega_weights(PointCloud(2.0 * rays), RigidTransform.identity(), fov).weights
        assert np.all(np.diff(weights) <= 0.0)
    radii = np.linspace(5.5, 50.0, 20)
    beyond = calc_omega_weights(PointCloud(np.outer(radii, [1.0, 0.0, 0.0])), RigidTransform.identity(), fov)
    assert np.all(np.diff(beyond.weights) <= 0.0)


def test_penalties_do_not_depend_on_the_common_frame():
    rng = np.random.default_rng(3)
    cloud = PointCloud(rng.uniform(-10.0, 10.0, size=(5000, 3)))
    pose = RigidTransform.from_rotvec([0.2, -0.1, 0.4], [1.0, -2.0, 0.5])
    fov = SensorFov.from_degrees(90.0, 45.0, psi_min=0.5, psi_max=12.0)
    frame = RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(scale=5.0, size=3))
    moved = calc_omega_weights(PointCloud(frame.apply(cloud.points)), transform_compose(frame, pose), fov)
    original = calc_omega_weights(cloud, pose, fov)
    assert np.allclose(moved.penalties, original.penalties, rtol=0.0, atol=1e-9)


def test_permuting_points_permutes_weights():
    rng = np.random.default_rng(4)
    cloud = PointCloud(rng.uniform(-10.0, 10.0, size=(2000, 3)))
    pose = RigidTransform.from_rotvec([0.0, 0.3, -0.2], [0.5, 0.0, 1.0])
    fov = SensorFov.from_degrees(70.0, 50.0, psi_min=1.0, psi_max=9.0)
    order = rng.permutation(len(cloud))
    weights = calc_omega_weights(cloud, pose, fov)
    shuffled = calc_omega_weights(cloud.subset(order), pose, fov)
    assert np.array_equal(shuffled.weights, weights.weights[order])
    assert np.array_equal(shuffled.penalties, weights.penalties[order])


def test_threaded_split_matches_serial():
    rng = np.random.default_rng(2)
    cloud = PointCloud(rng.uniform(-20.0, 20.0, size=(120000, 3)))
    pose = RigidTransform.from_rotvec([0.1, -0.3, 0.2], [1.0, 2.0, 0.5])
    fov = SensorFov.from_degrees(90.0, 40.0, psi_min=0.5, psi_max=15.0)
    serial = calc_omega_weights(cloud, pose, fov, workers=1)
    threaded = calc_omega_weights(cloud, pose, fov, workers=2)
    assert np.array_equal(serial.weights, threaded.weights)
    assert np.array_equal(serial.penalties, threaded.penalties)


def test_overlap_weights_are_read_only():
    weights = OverlapWeights.ones(4)
    assert len(weights) == 4
    with pytest.raises(ValueError):
        weights.weights[0] = 0.5
    with pytest.raises(GeometryError):
        OverlapWeights(np.ones(3), np.zeros(2))


def test_timing_probe_returns_one_sample_per_size():
    samples = weight_timing_probe([100, 1000], trials=2)
    assert [s.n for s in samples] == [100, 1000]
    assert all(s.median_ms > 0.0 for s in samples)
    with pytest.raises(ValueError):
        weight_timing_probe(0)


@pytest.mark.slow
def test_weight_time_scales_linearly():
    """Median time over 1e4..1e6 points fits a line; 1e6 points stay under 200 ms."""
    from overlap_registration.bench.timing import linear_fit

    samples = weight_timing_probe([10_000, 100_000, 1_000_000], trials=5, workers=os.cpu_count() or 1)
    assert linear_fit(samples).r_squared >= 0.95
    assert samples[-1].median_ms < 200.0
