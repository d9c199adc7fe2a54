"""Tests for the synthetic view simulator."""

import numpy as np
import pytest

from overlap_registration.dataset_io import write_ply
from overlap_registration.errors import EmptyViewError, GeometryError
from overlap_registration.geometry import PointCloud, RigidTransform, SensorFov, transform_compose
from overlap_registration.view_sim import (
    BUNNY_ENV_VAR,
    ORBIT_HEADING_OFFSET_DEG,
    ORBIT_RADIUS,
    WORLD_RADIUS,
    ViewSpec,
    frustum_mask,
    load_world,
    make_sequence,
    normalize_world,
    orbit_views,
    overlap_fraction,
    procedural_world,
    simulate_view,
    up_axis_rotation,
)

FOV = SensorFov.from_degrees(60.0, 60.0, psi_min=0.01, psi_max=10.0)


@pytest.fixture(scope='module')
def world():
    return procedural_world(3000, seed=1)


@pytest.fixture(scope='module')
def orbit(world):
    return make_sequence(world, orbit_views())


def test_procedural_world_is_deterministic_and_normalized():
    a = procedural_world(2000, seed=4)
    b = procedural_world(2000, seed=4)
    assert np.array_equal(a.points, b.points)
    assert np.allclose(a.centroid(), 0.0, atol=1e-12)
    assert np.linalg.norm(a.points, axis=1).max() == pytest.approx(WORLD_RADIUS)


@pytest.mark.parametrize('relief', [-0.1, 1.0])
def test_procedural_world_rejects_relief_outside_unit_interval(relief):
    with pytest.raises(GeometryError):
        procedural_world(100, relief=relief)


def test_relief_reshapes_the_world():
    smooth = procedural_world(2000, seed=4, relief=0.0)
    bumpy = procedural_world(2000, seed=4)
    assert not np.allclose(smooth.points, bumpy.points)
    assert np.linalg.norm(bumpy.points, axis=1).max() == pytest.approx(WORLD_RADIUS)


def test_normalize_world_rejects_zero_extent():
    with pytest.raises(GeometryError):
        normalize_world(PointCloud(np.ones((5, 3))))


@pytest.mark.parametrize('axis,expected', [('z', (0, 0, 1)), ('y', (0, 1, 0)), ('x', (1, 0, 0))])
def test_up_axis_rotation_maps_axis_to_z(axis, expected):
    rotated = up_axis_rotation(axis).apply(np.array([expected], dtype=float))
    assert np.allclose(rotated, [[0.0, 0.0, 1.0]], atol=1e-12)


def test_up_axis_rotation_rejects_unknown_axis():
    with pytest.raises(GeometryError):
        up_axis_rotation('w')


def test_view_behind_the_sensor_is_empty(world):
    view = ViewSpec(RigidTransform.from_euler_zyx(0.0, 0.0, 0.0, translation=(5.0, 0.0, 0.0)), FOV)
    with pytest.raises(EmptyViewError):
        simulate_view(world, view)


def test_simulate_view_rejects_empty_world():
    view = ViewSpec(RigidTransform.identity(), FOV)
    with pytest.raises(GeometryError):
        simulate_view(PointCloud(np.empty((0, 3))), view)


def test_view_spec_rejects_negative_noise():
    with pytest.raises(GeometryError):
        ViewSpec(RigidTransform.identity(), FOV, noise_sigma=-0.1)


def test_noisy_view_is_seeded(world):
    pose = orbit_views()[0].pose
    a, _ = simulate_view(world, ViewSpec(pose, FOV, noise_sigma=0.002, rng_seed=9))
    b, _ = simulate_view(world, ViewSpec(pose, FOV, noise_sigma=0.002, rng_seed=9))
    c, _ = simulate_view(world, ViewSpec(pose, FOV, noise_sigma=0.002, rng_seed=10))
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)


def test_make_sequence_needs_two_views(world):
    with pytest.raises(GeometryError):
        make_sequence(world, orbit_views(count=1))


def test_orbit_views_look_at_origin():
    for view in orbit_views(heading_offset_deg=0.0):
        # Sensor +x axis in world coordinates points back at the origin
        forward = view.pose.rotation[:, 0]
        assert np.allclose(forward, -view.pose.translation / np.linalg.norm(view.pose.translation))


def test_orbit_views_turn_left_of_the_origin():
    for view in orbit_views():
        forward = view.pose.rotation[:, 0]
        to_origin = -view.pose.translation / np.linalg.norm(view.pose.translation)
        assert np.degrees(np.arccos(np.clip(forward @ to_origin, -1.0, 1.0))) == pytest.approx(ORBIT_HEADING_OFFSET_DEG)
        assert np.cross(to_origin, forward)[2] > 0.0
        assert view.pose.translation[2] == 0.0
        assert np.linalg.norm(view.pose.translation) == pytest.approx(ORBIT_RADIUS)


def test_frames_lie_in_their_own_frustum(orbit):
    assert len(orbit) == 5
    for frame, fov in zip(orbit.frames, orbit.fovs):
        assert len(frame) > 0
        assert frustum_mask(frame.points, fov).all()


def test_relative_poses_chain_sensor_poses(orbit):
    for i, relative in enumerate(orbit.relative_poses):
        chained = transform_compose(orbit.poses[i], relative)
        assert np.allclose(chained.as_matrix(), orbit.poses[i + 1].as_matrix(), atol=1e-12)


def test_frames_map_back_onto_world(world, orbit):
    frame, pose = next(iter(orbit))
    in_world = pose.apply(frame.points)
    # Noise-free frames are a subset of the world
    distances = np.min(np.linalg.norm(in_world[:50, None, :] - world.points[None, :, :], axis=2), axis=1)
    assert np.allclose(distances, 0.0, atol=1e-12)


def test_consecutive_orbit_views_overlap_partially(orbit):
    for i, relative in enumerate(orbit.relative_poses):
        fraction = overlap_fraction(orbit.frames[i], orbit.frames[i + 1],
                                    orbit.fovs[i], orbit.fovs[i + 1], relative)
        assert 0.0 < fraction < 1.0


@pytest.fixture(scope='module')
def preset_orbit():
    return make_sequence(procedural_world(), orbit_views())


def test_preset_views_share_a_partial_overlap(preset_orbit):
    for i, relative in enumerate(preset_orbit.relative_poses):
        fraction = overlap_fraction(preset_orbit.frames[i], preset_orbit.frames[i + 1],
                                    preset_orbit.fovs[i], preset_orbit.fovs[i + 1], relative)
        assert 0.3 <= fraction <= 0.8


def test_overlap_fraction_is_symmetric(orbit):
    relative = orbit.relative_poses[1]
    forward = overlap_fraction(orbit.frames[1], orbit.frames[2], orbit.fovs[1], orbit.fovs[2], relative)
    backward = overlap_fraction(orbit.frames[2], orbit.frames[1], orbit.fovs[2], orbit.fovs[1],
                                relative.inverse())
    assert forward == pytest.approx(backward, abs=1e-12)


def test_disjoint_frusta_do_not_overlap():
    rng = np.random.default_rng(0)
    ahead = PointCloud(rng.uniform([1.0, -0.1, -0.1], [2.0, 0.1, 0.1], size=(50, 3)))
    # Second sensor at the same spot facing the other way
    facing_back = RigidTransform.from_euler_zyx(np.pi, 0.0, 0.0)
    assert overlap_fraction(ahead, ahead, FOV, FOV, facing_back) == 0.0


def test_overlap_fraction_averages_both_directions():
    wide = SensorFov.from_degrees(120.0, 60.0)
    narrow = SensorFov.from_degrees(60.0, 60.0)
    centre = np.tile([1.0, 0.0, 0.0], (4, 1))
    side = np.tile([1.0, 0.9, 0.0], (4, 1))
    a = PointCloud(np.vstack([centre, side]))
    b = PointCloud(centre)
    # Half of a lies in the narrow frustum, all of b in the wide one
    assert overlap_fraction(a, b, wide, narrow, RigidTransform.identity()) == pytest.approx(0.75)


def test_full_sphere_view_keeps_every_point(world):
    pose = orbit_views()[2].pose
    frame, _ = simulate_view(world, ViewSpec(pose, SensorFov.full_sphere()))
    assert len(frame) == len(world)


def test_overlap_fraction_of_a_frame_with_itself_is_one(orbit):
    frame = orbit.frames[0]
    assert overlap_fraction(frame, frame, orbit.fovs[0], orbit.fovs[0],
                            RigidTransform.identity()) == pytest.approx(1.0)


def test_bunny_falls_back_to_procedural_world(clean_env):
    world = load_world('bunny', n_points=500, seed=3)
    assert np.array_equal(world.points, procedural_world(500, seed=3).points)


def test_bunny_path_from_environment(clean_env, monkeypatch, tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / 'bunny.ply'
    write_ply(path, PointCloud(rng.uniform(-3.0, 3.0, size=(200, 3)) + 10.0))
    monkeypatch.setenv(BUNNY_ENV_VAR, str(path))

    world = load_world('bunny', up_axis='z')
    assert len(world) == 200
    assert np.allclose(world.centroid(), 0.0, atol=1e-12)
    assert np.linalg.norm(world.points, axis=1).max() == pytest.approx(WORLD_RADIUS)
