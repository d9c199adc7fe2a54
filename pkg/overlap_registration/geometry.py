"""Core geometry: point clouds, rigid transforms, sensor fields-of-view and pose errors.

All types are immutable after construction. Arrays held by them are marked
read-only so instances can be shared freely across worker threads.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np
from scipy.linalg import polar
from scipy.spatial.transform import Rotation

from .errors import GeometryError

# Rotations drifting beyond this are re-orthonormalized on construction
ORTHONORMAL_TOLERANCE = 1e-9
# Rotations drifting beyond this are rejected outright
REJECT_TOLERANCE = 1e-3
GIMBAL_TOLERANCE = 1e-6
EULER_CONVENTION = 'intrinsic Z-Y-X (yaw, pitch, roll)'

TWO_PI = 2.0 * math.pi


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def _orthonormal_deviation(rotation: np.ndarray) -> float:
    gram = rotation.T @ rotation - np.eye(3)
    return max(float(np.max(np.abs(gram))), abs(float(np.linalg.det(rotation)) - 1.0))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered set of 3D points (meters) with optional per-point intensity."""

    points: np.ndarray
    intensity: Optional[np.ndarray] = None

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.size == 0:
            points = points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise GeometryError(f'points must have shape (N, 3), got {points.shape}')
        if not np.all(np.isfinite(points)):
            raise GeometryError('point coordinates must be finite')
        object.__setattr__(self, 'points', _read_only(points))

        if self.intensity is not None:
            intensity = np.array(self.intensity, dtype=np.float64).reshape(-1)
            if len(intensity) != len(points):
                raise GeometryError(
                    f'intensity length {len(intensity)} does not match point count {len(points)}'
                )
            object.__setattr__(self, 'intensity', _read_only(intensity))

    def __len__(self) -> int:
        return len(self.points)

    def centroid(self) -> np.ndarray:
        if len(self) == 0:
            raise GeometryError('centroid of an empty cloud is undefined')
        return self.points.mean(axis=0)

    def subset(self, indices) -> 'PointCloud':
        """Return the points selected by an index array or boolean mask, in order."""
        intensity = None if self.intensity is None else self.intensity[indices]
        return PointCloud(self.points[indices], intensity)

    def with_points(self, points: np.ndarray) -> 'PointCloud':
        """Return a cloud with new coordinates and the same attribute layout."""
        return PointCloud(points, self.intensity)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation + translation pair mapping x to R·x + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.array(self.rotation, dtype=np.float64)
        translation = np.array(self.translation, dtype=np.float64).reshape(-1)
        if rotation.shape != (3, 3):
            raise GeometryError(f'rotation must be 3x3, got {rotation.shape}')
        if translation.shape != (3,):
            raise GeometryError(f'translation must be a 3-vector, got {translation.shape}')
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise GeometryError('transform entries must be finite')

        deviation = _orthonormal_deviation(rotation)
        if deviation > REJECT_TOLERANCE:
            raise GeometryError(f'rotation is not orthonormal (deviation {deviation:.3e})')
        if deviation > ORTHONORMAL_TOLERANCE:
            rotation, _ = polar(rotation)

        object.__setattr__(self, 'rotation', _read_only(rotation))
        object.__setattr__(self, 'translation', _read_only(translation))

    @classmethod
    def identity(cls) -> 'RigidTransform':
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix) -> 'RigidTransform':
        """Build from a 3x4 or 4x4 homogeneous matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape not in ((3, 4), (4, 4)):
            raise GeometryError(f'expected a 3x4 or 4x4 matrix, got {matrix.shape}')
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_euler_zyx(cls, yaw: float, pitch: float, roll: float,
                       translation: Sequence[float] = (0.0, 0.0, 0.0),
                       degrees: bool = False) -> 'RigidTransform':
        rotation = Rotation.from_euler('ZYX', [yaw, pitch, roll], degrees=degrees).as_matrix()
        return cls(rotation, translation)

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float],
                    translation: Sequence[float] = (0.0, 0.0, 0.0)) -> 'RigidTransform':
        return cls(Rotation.from_rotvec(rotvec).as_matrix(), translation)

    def as_matrix(self) -> np.ndarray:
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def as_rows_3x4(self) -> List[float]:
        """Row-major 3x4 flattening (KITTI pose line layout)."""
        return [float(v) for v in self.as_matrix()[:3, :].reshape(-1)]

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> 'RigidTransform':
        return transform_inverse(self)

    def compose(self, other: 'RigidTransform') -> 'RigidTransform':
        return transform_compose(self, other)

    def __matmul__(self, other: 'RigidTransform') -> 'RigidTransform':
        return transform_compose(self, other)


@dataclass(frozen=True)
class SensorFov:
    """View frustum parameters: range bounds (meters) and angular extents (radians).

    The sensor looks along its local +x axis with +z up; psi_x is the full
    horizontal extent and psi_y the full vertical extent.
    """

    psi_min: float = 0.0
    psi_max: float = math.inf
    psi_x: float = TWO_PI
    psi_y: float = math.pi

    def __post_init__(self):
        if not (math.isfinite(self.psi_min) and self.psi_min >= 0.0):
            raise GeometryError(f'psi_min must be finite and >= 0, got {self.psi_min}')
        if math.isnan(self.psi_max) or self.psi_max <= self.psi_min:
            raise GeometryError(f'psi_max must exceed psi_min, got {self.psi_max}')
        if not 0.0 < self.psi_x <= TWO_PI + 1e-12:
            raise GeometryError(f'psi_x must lie in (0, 2π], got {self.psi_x}')
        if not 0.0 < self.psi_y <= math.pi + 1e-12:
            raise GeometryError(f'psi_y must lie in (0, π], got {self.psi_y}')
        object.__setattr__(self, 'psi_x', min(float(self.psi_x), TWO_PI))
        object.__setattr__(self, 'psi_y', min(float(self.psi_y), math.pi))

    @classmethod
    def full_sphere(cls) -> 'SensorFov':
        return cls()

    @classmethod
    def from_degrees(cls, h_fov_deg: float, v_fov_deg: float,
                     psi_min: float = 0.0, psi_max: float = math.inf) -> 'SensorFov':
        return cls(psi_min=psi_min, psi_max=psi_max,
                   psi_x=math.radians(h_fov_deg), psi_y=math.radians(v_fov_deg))

    @property
    def is_full_sphere(self) -> bool:
        return (self.psi_min == 0.0 and math.isinf(self.psi_max)
                and self.psi_x >= TWO_PI and self.psi_y >= math.pi)

    def to_dict(self) -> dict:
        return {
            'psi_min': self.psi_min,
            'psi_max': None if math.isinf(self.psi_max) else self.psi_max,
            'psi_x': self.psi_x,
            'psi_y': self.psi_y,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'SensorFov':
        """Parse radians (psi_x/psi_y) or degrees (h_fov_deg/v_fov_deg); null psi_max is unbounded."""
        psi_max = data.get('psi_max')
        psi_max = math.inf if psi_max is None else float(psi_max)
        psi_min = float(data.get('psi_min', 0.0))
        if 'h_fov_deg' in data or 'v_fov_deg' in data:
            return cls.from_degrees(float(data.get('h_fov_deg', 360.0)),
                                    float(data.get('v_fov_deg', 180.0)),
                                    psi_min=psi_min, psi_max=psi_max)
        return cls(psi_min=psi_min, psi_max=psi_max,
                   psi_x=float(data.get('psi_x', TWO_PI)),
                   psi_y=float(data.get('psi_y', math.pi)))


@dataclass(frozen=True)
class PoseError:
    """Rotation error in degrees and translation error in meters."""

    rotation_error: float
    translation_error: float
    gimbal_lock: bool = False

    def __post_init__(self):
        for name in ('rotation_error', 'translation_error'):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise GeometryError(f'{name} must be finite and >= 0, got {value}')


def transform_apply(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map every point z to R·z + t, preserving order and attributes."""
    return cloud.with_points(transform.apply(cloud.points))


def transform_inverse(transform: RigidTransform) -> RigidTransform:
    rotation_t = transform.rotation.T
    return RigidTransform(rotation_t, -rotation_t @ transform.translation)


def transform_compose(first: RigidTransform, second: RigidTransform) -> RigidTransform:
    """Return the transform equivalent to applying `second`, then `first`."""
    return RigidTransform(
        first.rotation @ second.rotation,
        first.rotation @ second.translation + first.translation,
    )


def rotation_angle(rotation: np.ndarray) -> float:
    """Rotation angle in radians from the trace, using the atan2 form for accuracy near zero."""
    cos_angle = (np.trace(rotation) - 1.0) / 2.0
    axis = np.array([
        rotation[2, 1] - rotation[1, 2],
        rotation[0, 2] - rotation[2, 0],
        rotation[1, 0] - rotation[0, 1],
    ])
    sin_angle = np.linalg.norm(axis) / 2.0
    return float(math.atan2(sin_angle, cos_angle))


def transform_delta(first: RigidTransform, second: RigidTransform) -> PoseError:
    """Angle of R_aᵀR_b in degrees and distance between translations."""
    angle = rotation_angle(first.rotation.T @ second.rotation)
    return PoseError(
        rotation_error=math.degrees(angle),
        translation_error=float(np.linalg.norm(first.translation - second.translation)),
    )


def pose_error_euler(estimate: RigidTransform, ground_truth: RigidTransform) -> PoseError:
    """Mean absolute intrinsic Z-Y-X Euler deviation (degrees) plus translation error (meters)."""
    relative = ground_truth.rotation.T @ estimate.rotation
    with warnings.catch_warnings():
        # scipy warns on gimbal lock; the degenerate branch is still well defined
        warnings.simplefilter('ignore', UserWarning)
        angles = Rotation.from_matrix(relative).as_euler('ZYX')
    gimbal = abs(abs(float(angles[1])) - math.pi / 2.0) < GIMBAL_TOLERANCE
    return PoseError(
        rotation_error=math.degrees(float(np.mean(np.abs(angles)))),
        translation_error=float(np.linalg.norm(estimate.translation - ground_truth.translation)),
        gimbal_lock=gimbal,
    )


def compound_poses(relatives: Iterable[RigidTransform],
                   start: Optional[RigidTransform] = None) -> List[RigidTransform]:
    """Chain frame-to-frame transforms into a global trajectory starting at `start`."""
    trajectory = [start or RigidTransform.identity()]
    for relative in relatives:
        trajectory.append(transform_compose(trajectory[-1], relative))
    return trajectory
