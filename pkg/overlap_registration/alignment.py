"""Weighted closed-form rigid alignment of corresponded point pairs (Horn's quaternion method)."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import DegenerateCorrespondencesError, GeometryError, RankDeficientError, ReflectionError
from .geometry import PointCloud, RigidTransform

MIN_EFFECTIVE_PAIRS = 3
RANK_RTOL = 1e-12


def _read_only(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Matched (source, target) index pairs with weights in [0, 1] and squared distances (m²)."""

    source_indices: np.ndarray
    target_indices: np.ndarray
    weights: np.ndarray
    squared_distances: np.ndarray

    def __post_init__(self):
        source = np.asarray(self.source_indices, dtype=np.intp).reshape(-1)
        target = np.asarray(self.target_indices, dtype=np.intp).reshape(-1)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        sq_dist = np.asarray(self.squared_distances, dtype=np.float64).reshape(-1)
        if not len(source) == len(target) == len(weights) == len(sq_dist):
            raise GeometryError('correspondence arrays must have equal length')
        if np.any(~np.isfinite(weights)) or np.any(weights < 0.0) or np.any(weights > 1.0):
            raise GeometryError('correspondence weights must lie in [0, 1]')
        if len(np.unique(source)) != len(source):
            raise GeometryError('duplicate source indices in correspondence set')
        for name, array in (('source_indices', source), ('target_indices', target),
                            ('weights', weights), ('squared_distances', sq_dist)):
            object.__setattr__(self, name, _read_only(array))

    @classmethod
    def empty(cls) -> 'CorrespondenceSet':
        return cls(np.empty(0, np.intp), np.empty(0, np.intp), np.empty(0), np.empty(0))

    def __len__(self) -> int:
        return len(self.source_indices)

    @property
    def distances(self) -> np.ndarray:
        return np.sqrt(self.squared_distances)

    @property
    def effective_count(self) -> int:
        return int(np.count_nonzero(self.weights > 0.0))

    def select(self, positions) -> 'CorrespondenceSet':
        """Subset by position array or boolean mask, keeping relative order."""
        return CorrespondenceSet(self.source_indices[positions], self.target_indices[positions],
                                 self.weights[positions], self.squared_distances[positions])

    def with_weights(self, weights: np.ndarray) -> 'CorrespondenceSet':
        return CorrespondenceSet(self.source_indices, self.target_indices,
                                 weights, self.squared_distances)


def weighted_objective(transform: RigidTransform, source: PointCloud, target: PointCloud,
                       corr: CorrespondenceSet) -> float:
    """Σ wᵢ‖R·srcᵢ + t − dstᵢ‖² over the correspondence set."""
    if len(corr) == 0:
        return 0.0
    residual = transform.apply(source.points[corr.source_indices]) - target.points[corr.target_indices]
    return float(np.einsum('i,ij,ij->', corr.weights, residual, residual))


def _horn_matrix(cross: np.ndarray) -> np.ndarray:
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = cross
    return np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])


def weighted_horn(source: PointCloud, target: PointCloud, corr: CorrespondenceSet) -> RigidTransform:
    """Rigid transform minimizing Σ wᵢ‖R·srcᵢ + t − dstᵢ‖².

    Zero-weight pairs are dropped before any arithmetic. Reductions use einsum,
    which sums in a fixed order independent of BLAS threading.

    Raises:
        DegenerateCorrespondencesError: Fewer than three positive-weight pairs
        RankDeficientError: Weighted source points do not span three dimensions
        ReflectionError: Optimal rotation has det < 0
    """
    active = corr.weights > 0.0
    count = int(np.count_nonzero(active))
    if count < MIN_EFFECTIVE_PAIRS:
        raise DegenerateCorrespondencesError(
            f'degenerate correspondences: {count} effective pairs, need {MIN_EFFECTIVE_PAIRS}'
        )
    src_idx = corr.source_indices[active]
    dst_idx = corr.target_indices[active]
    if src_idx.max() >= len(source) or dst_idx.max() >= len(target) or min(src_idx.min(), dst_idx.min()) < 0:
        raise GeometryError('correspondence index out of range')

    weights = corr.weights[active]
    src = source.points[src_idx]
    dst = target.points[dst_idx]
    total = weights.sum()
    src_mean = np.einsum('i,ij->j', weights, src) / total
    dst_mean = np.einsum('i,ij->j', weights, dst) / total
    src_c = src - src_mean
    dst_c = dst - dst_mean

    scatter = np.einsum('i,ij,ik->jk', weights, src_c, src_c)
    singular = np.linalg.svd(scatter, compute_uv=False)
    if singular[-1] <= RANK_RTOL * singular[0]:
        raise RankDeficientError(
            f'rank-deficient weighted source configuration (singular values {singular})'
        )

    cross = np.einsum('i,ij,ik->jk', weights, src_c, dst_c)
    if np.max(np.abs(cross)) <= RANK_RTOL * singular[0]:
        # Targets collapse to a single point: rotation is unconstrained
        rotation = np.eye(3)
    else:
        _, vectors = np.linalg.eigh(_horn_matrix(cross))
        w, x, y, z = vectors[:, -1]
        rotation = Rotation.from_quat([x, y, z, w]).as_matrix()

    if np.linalg.det(rotation) < 0.0:
        raise ReflectionError('optimal rotation is a reflection')
    return RigidTransform(rotation, dst_mean - rotation @ src_mean)
