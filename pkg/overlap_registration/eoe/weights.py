"""Per-point field-of-view penalties and exponential overlap weights."""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Union

import numpy as np

from ..errors import GeometryError
from ..geometry import PointCloud, RigidTransform, SensorFov

TWO_PI = 2.0 * math.pi

# Below this many points per worker, splitting costs more than it saves
MIN_POINTS_PER_WORKER = 50_000


@dataclass(frozen=True)
class PenaltyConstants:
    """k0: range-violation penalty, k1: weight scale in (0, 1], k2: decay rate."""

    k0: float = 1.0
    k1: float = 1.0
    k2: float = 5.0

    def __post_init__(self):
        if not self.k0 > 0.0:
            raise GeometryError(f'k0 must be > 0, got {self.k0}')
        if not 0.0 < self.k1 <= 1.0:
            raise GeometryError(f'k1 must lie in (0, 1], got {self.k1}')
        if not self.k2 > 0.0:
            raise GeometryError(f'k2 must be > 0, got {self.k2}')

    def to_dict(self) -> dict:
        return {'k0': self.k0, 'k1': self.k1, 'k2': self.k2}

    @classmethod
    def from_dict(cls, data: dict) -> 'PenaltyConstants':
        return cls(**{key: float(data[key]) for key in ('k0', 'k1', 'k2') if key in data})


@dataclass(frozen=True)
class WeightStats:
    count: int
    min: float
    mean: float
    fraction_downweighted: float

    def to_dict(self) -> dict:
        return {
            'count': self.count,
            'min': self.min,
            'mean': self.mean,
            'fraction_downweighted': self.fraction_downweighted,
        }


@dataclass(frozen=True, eq=False)
class OverlapWeights:
    """Per-point weights in (0, 1] with the penalties ξ ≥ 0 that produced them."""

    weights: np.ndarray
    penalties: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        penalties = np.asarray(self.penalties, dtype=np.float64).reshape(-1)
        if len(weights) != len(penalties):
            raise GeometryError('weights and penalties must have equal length')
        weights.setflags(write=False)
        penalties.setflags(write=False)
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'penalties', penalties)

    @classmethod
    def ones(cls, count: int) -> 'OverlapWeights':
        return cls(np.ones(count), np.zeros(count))

    def __len__(self) -> int:
        return len(self.weights)

    def stats(self) -> WeightStats:
        if len(self) == 0:
            return WeightStats(0, 1.0, 1.0, 0.0)
        return WeightStats(
            count=len(self),
            min=float(self.weights.min()),
            mean=float(self.weights.mean()),
            fraction_downweighted=float(np.count_nonzero(self.weights < 1.0) / len(self)),
        )


def fov_penalties(local: np.ndarray, fov: SensorFov, k0: float,
                  corrected_vertical: bool = False) -> np.ndarray:
    """Accumulated violation ξ for points already expressed in the sensor frame.

    Terms are added in a fixed order: range, horizontal, upper vertical, lower
    vertical. The lower vertical branch is, by default, the published form
    ξ += −φ + (π/2 + Ψ_y/2), which does not vanish at its own boundary;
    `corrected_vertical` uses ξ += (π/2 − Ψ_y/2) − φ instead.
    """
    distance = np.sqrt(np.einsum('ij,ij->i', local, local))
    theta = np.arctan2(local[:, 1], local[:, 0])
    theta = np.where(theta < 0.0, theta + TWO_PI, theta)
    with np.errstate(invalid='ignore', divide='ignore'):
        phi = np.arccos(np.clip(local[:, 2] / distance, -1.0, 1.0))

    xi = np.zeros(len(local))
    xi += np.where((distance < fov.psi_min) | (distance > fov.psi_max), k0, 0.0)

    half_x = fov.psi_x / 2.0
    horizontal = (theta > half_x) & (theta < TWO_PI - half_x)
    xi += np.where(horizontal, np.minimum(theta - half_x, TWO_PI - half_x - theta), 0.0)

    half_y = fov.psi_y / 2.0
    upper = 2.0 * phi > math.pi + fov.psi_y
    xi += np.where(upper, phi - (math.pi / 2.0 + half_y), 0.0)
    lower = 2.0 * phi < math.pi - fov.psi_y
    if corrected_vertical:
        lower_term = (math.pi / 2.0 - half_y) - phi
    else:
        lower_term = -phi + (math.pi / 2.0 + half_y)
    xi += np.where(lower, lower_term, 0.0)

    # Direction is undefined at the sensor origin: treat as a min-range violation.
    # A full-sphere sensor sees everything, its origin included.
    if not fov.is_full_sphere:
        xi[distance == 0.0] = k0
    return xi


def _weights_chunk(points: np.ndarray, pose: RigidTransform, fov: SensorFov,
                   penalties: PenaltyConstants, corrected_vertical: bool):
    local = (points - pose.translation) @ pose.rotation
    xi = fov_penalties(local, fov, penalties.k0, corrected_vertical)
    weights = np.ones(len(points))
    violated = xi > 0.0
    weights[violated] = penalties.k1 * np.exp(-penalties.k2 * xi[violated])
    return weights, xi


def calc_omega_weights(cloud: PointCloud, pose: RigidTransform, fov: SensorFov,
                       penalties: Optional[PenaltyConstants] = None,
                       corrected_vertical: bool = False, workers: int = 1) -> OverlapWeights:
    """Project each point into the other sensor's frame and downweight FOV violations.

    Args:
        cloud: Points in the frame they were observed in
        pose: Estimated pose {R, t} of the other sensor in that same frame
        fov: The other sensor's field-of-view
        penalties: k0, k1, k2 (defaults 1, 1, 5)
        corrected_vertical: Use the boundary-continuous lower vertical term
        workers: Threads to split the points across; output order is unchanged

    Returns:
        OverlapWeights with weight 1 where ξ = 0 and k1·exp(−k2·ξ) elsewhere
    """
    penalties = penalties or PenaltyConstants()
    points = cloud.points
    chunks = max(1, min(int(workers), len(points) // MIN_POINTS_PER_WORKER))
    if chunks == 1:
        weights, xi = _weights_chunk(points, pose, fov, penalties, corrected_vertical)
        return OverlapWeights(weights, xi)

    parts = np.array_split(points, chunks)
    with ThreadPoolExecutor(max_workers=chunks) as pool:
        results = list(pool.map(
            lambda part: _weights_chunk(part, pose, fov, penalties, corrected_vertical), parts
        ))
    return OverlapWeights(np.concatenate([r[0] for r in results]),
                          np.concatenate([r[1] for r in results]))


@dataclass(frozen=True)
class TimingSample:
    n: int
    median_ms: float


def weight_timing_probe(n: Union[int, Iterable[int]], trials: int = 5, seed: int = 0,
                        fov: Optional[SensorFov] = None, workers: int = 1) -> List[TimingSample]:
    """Median wall time of calc_omega_weights on random clouds of each requested size."""
    sizes = [n] if isinstance(n, (int, np.integer)) else list(n)
    if any(size < 1 for size in sizes):
        raise ValueError('point counts must be >= 1')
    if trials < 1:
        raise ValueError('trials must be >= 1')

    fov = fov or SensorFov.from_degrees(60.0, 30.0, psi_min=0.5, psi_max=50.0)
    rng = np.random.default_rng(seed)
    samples = []
    for size in sizes:
        cloud = PointCloud(rng.uniform(-30.0, 30.0, size=(int(size), 3)))
        pose = RigidTransform.from_rotvec(rng.normal(scale=0.3, size=3), rng.normal(size=3))
        elapsed = []
        for _ in range(trials):
            start = time.perf_counter()
            calc_omega_weights(cloud, pose, fov, workers=workers)
            elapsed.append((time.perf_counter() - start) * 1000.0)
        samples.append(TimingSample(int(size), float(np.median(elapsed))))
    return samples
