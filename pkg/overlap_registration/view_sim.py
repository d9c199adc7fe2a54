"""Synthetic partial-overlap views: a range sensor with a limited field-of-view observing a world cloud."""
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np
from dotenv import load_dotenv

from .dataset_io import read_ply
from .eoe.weights import fov_penalties
from .errors import EmptyViewError, GeometryError
from .geometry import PointCloud, RigidTransform, SensorFov, transform_compose, transform_inverse

logger = logging.getLogger(__name__)

BUNNY_ENV_VAR = 'OVERLAP_REG_BUNNY'
WORLD_RADIUS = 0.5

# Orbit preset: five views, 25° apart, 60° × 60° frustum. Sensors ride a circle
# just outside the body and head shells and look 50° off the center line, so
# each frustum cuts the object and consecutive views share only part of it.
ORBIT_VIEWS = 5
ORBIT_YAW_STEP_DEG = 25.0
ORBIT_FOV_DEG = 60.0
ORBIT_PSI_MIN = 0.01
ORBIT_PSI_MAX = 10.0
ORBIT_RADIUS = 0.35
ORBIT_HEADING_OFFSET_DEG = 50.0

# (center, radii, share of points) for the procedural stand-in: body, head, two ears
_WORLD_SHELLS = (
    ((0.0, 0.0, 0.0), (0.50, 0.38, 0.36), 0.55),
    ((0.42, 0.0, 0.24), (0.20, 0.17, 0.17), 0.25),
    ((0.46, 0.08, 0.50), (0.05, 0.03, 0.18), 0.10),
    ((0.40, -0.08, 0.50), (0.05, 0.03, 0.18), 0.10),
)
# Radial relief on every shell: amplitude, then (azimuth, elevation) frequencies
WORLD_RELIEF = 0.1
WORLD_RELIEF_FREQ = (5.0, 4.0)


@dataclass(frozen=True)
class ViewSpec:
    """Sensor pose (sensor-to-world), frustum, isotropic noise (meters) and noise seed."""

    pose: RigidTransform
    fov: SensorFov
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0.0):
            raise GeometryError(f'noise_sigma must be finite and >= 0, got {self.noise_sigma}')


def frustum_mask(local_points: np.ndarray, fov: SensorFov) -> np.ndarray:
    """Points (in the sensor frame) with zero field-of-view penalty."""
    return fov_penalties(np.asarray(local_points, dtype=np.float64).reshape(-1, 3), fov, 1.0) == 0.0


def _to_sensor_frame(points: np.ndarray, pose: RigidTransform) -> np.ndarray:
    return (points - pose.translation) @ pose.rotation


def simulate_view(world: PointCloud, view: ViewSpec) -> Tuple[PointCloud, RigidTransform]:
    """Cut the world down to what the sensor sees, expressed in the sensor frame.

    Raises:
        GeometryError: The world cloud is empty
        EmptyViewError: No world point lies inside the frustum
    """
    if len(world) == 0:
        raise GeometryError('world cloud is empty')
    local = _to_sensor_frame(world.points, view.pose)
    keep = frustum_mask(local, view.fov)
    if not keep.any():
        raise EmptyViewError('empty view: no world point inside the field-of-view')
    points = local[keep]
    if view.noise_sigma > 0.0:
        rng = np.random.default_rng(view.rng_seed)
        points = points + rng.normal(scale=view.noise_sigma, size=points.shape)
    intensity = None if world.intensity is None else world.intensity[keep]
    logger.debug('view kept %d of %d world points', len(points), len(world))
    return PointCloud(points, intensity), view.pose


@dataclass(frozen=True)
class ViewSequence:
    """Simulated frames, their sensor poses and the ground-truth frame-to-frame transforms.

    `relative_poses[i]` maps frame i+1 into frame i (pose_iᵀ∘pose_{i+1}).
    """

    frames: Tuple[PointCloud, ...]
    poses: Tuple[RigidTransform, ...]
    relative_poses: Tuple[RigidTransform, ...]
    fovs: Tuple[SensorFov, ...]

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[Tuple[PointCloud, RigidTransform]]:
        return iter(zip(self.frames, self.poses))


def make_sequence(world: PointCloud, views: Sequence[ViewSpec]) -> ViewSequence:
    if len(views) < 2:
        raise GeometryError(f'a sequence needs at least 2 views, got {len(views)}')
    frames, poses = zip(*(simulate_view(world, view) for view in views))
    relative = tuple(
        transform_compose(transform_inverse(poses[i]), poses[i + 1]) for i in range(len(poses) - 1)
    )
    return ViewSequence(tuple(frames), tuple(poses), relative, tuple(view.fov for view in views))


def overlap_fraction(a: PointCloud, b: PointCloud, fov_a: SensorFov, fov_b: SensorFov,
                     t_gt: RigidTransform) -> float:
    """Mean of the fraction of a's points inside b's frustum and vice versa.

    `t_gt` maps b's frame into a's frame, i.e. it is b's sensor pose expressed in a's frame.
    """
    if len(a) == 0 or len(b) == 0:
        raise GeometryError('overlap fraction of an empty cloud is undefined')
    a_in_b = frustum_mask(_to_sensor_frame(a.points, t_gt), fov_b)
    b_in_a = frustum_mask(_to_sensor_frame(b.points, transform_inverse(t_gt)), fov_a)
    return float((a_in_b.mean() + b_in_a.mean()) / 2.0)


def orbit_views(count: int = ORBIT_VIEWS, yaw_step_deg: float = ORBIT_YAW_STEP_DEG,
                h_fov_deg: float = ORBIT_FOV_DEG, v_fov_deg: float = ORBIT_FOV_DEG,
                psi_min: float = ORBIT_PSI_MIN, psi_max: float = ORBIT_PSI_MAX,
                radius: float = ORBIT_RADIUS,
                heading_offset_deg: float = ORBIT_HEADING_OFFSET_DEG,
                noise_sigma: float = 0.0, seed: int = 0) -> List[ViewSpec]:
    """Sensors on a horizontal circle around the origin.

    View i sits at angle i·`yaw_step_deg` on the circle, faces the origin and
    is then turned left by `heading_offset_deg` (0 looks through the origin).
    """
    fov = SensorFov.from_degrees(h_fov_deg, v_fov_deg, psi_min=psi_min, psi_max=psi_max)
    views = []
    for i in range(count):
        alpha = math.radians(i * yaw_step_deg)
        position = radius * np.array([math.cos(alpha), math.sin(alpha), 0.0])
        heading = alpha + math.pi + math.radians(heading_offset_deg)
        pose = RigidTransform.from_euler_zyx(heading, 0.0, 0.0, translation=position)
        views.append(ViewSpec(pose, fov, noise_sigma, seed + i))
    return views


def normalize_world(cloud: PointCloud, radius: float = WORLD_RADIUS) -> PointCloud:
    """Center on the centroid and scale so the farthest point sits at `radius`."""
    centered = cloud.points - cloud.centroid()
    extent = float(np.sqrt(np.einsum('ij,ij->i', centered, centered)).max())
    if extent == 0.0:
        raise GeometryError('cannot normalize a world with zero extent')
    return cloud.with_points(centered * (radius / extent))


def procedural_world(n_points: int = 20000, seed: int = 0, relief: float = WORLD_RELIEF) -> PointCloud:
    """Bunny-like union of ellipsoid shells (body, head, ears), normalized to the world radius.

    Each shell's radius is modulated by 1 + relief·sin(5·azimuth)·cos(4·elevation)
    of the sampling direction.
    """
    if not 0.0 <= relief < 1.0:
        raise GeometryError(f'relief must lie in [0, 1), got {relief}')
    rng = np.random.default_rng(seed)
    freq_azimuth, freq_elevation = WORLD_RELIEF_FREQ
    parts = []
    for center, radii, share in _WORLD_SHELLS:
        count = max(1, int(round(share * n_points)))
        directions = rng.normal(size=(count, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        azimuth = np.arctan2(directions[:, 1], directions[:, 0])
        elevation = np.arcsin(np.clip(directions[:, 2], -1.0, 1.0))
        relief_scale = 1.0 + relief * np.sin(freq_azimuth * azimuth) * np.cos(freq_elevation * elevation)
        parts.append(directions * relief_scale[:, None] * np.asarray(radii) + np.asarray(center))
    return normalize_world(PointCloud(np.concatenate(parts)))


def up_axis_rotation(up_axis: str) -> RigidTransform:
    """Rotation taking the given up axis onto +z."""
    if up_axis == 'z':
        return RigidTransform.identity()
    if up_axis == 'y':
        return RigidTransform.from_euler_zyx(0.0, 0.0, math.pi / 2.0)
    if up_axis == 'x':
        return RigidTransform.from_euler_zyx(0.0, -math.pi / 2.0, 0.0)
    raise GeometryError(f"up axis must be 'x', 'y' or 'z', got {up_axis!r}")


def load_world(source: Union[str, Path, None] = 'procedural', up_axis: str = 'y',
               n_points: int = 20000, seed: int = 0, relief: float = WORLD_RELIEF) -> PointCloud:
    """World cloud for the orbit preset.

    `source` is a PLY path, 'bunny' (path from OVERLAP_REG_BUNNY) or
    'procedural'. File-based worlds are rotated so `up_axis` becomes +z,
    then normalized; a 'bunny' request with no file configured falls back to
    the procedural stand-in. `n_points`, `seed` and `relief` only shape the
    procedural world.
    """
    if source is None or source == 'procedural':
        return procedural_world(n_points, seed, relief)
    if source == 'bunny':
        load_dotenv()
        bunny = os.getenv(BUNNY_ENV_VAR)
        if not bunny or not Path(bunny).exists():
            logger.warning('%s not set or missing; using the procedural world', BUNNY_ENV_VAR)
            return procedural_world(n_points, seed, relief)
        source = bunny

    cloud = read_ply(Path(source))
    rotated = cloud.with_points(up_axis_rotation(up_axis).apply(cloud.points))
    return normalize_world(rotated)
