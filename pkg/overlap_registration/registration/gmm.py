"""Gaussian-mixture registrar: EM model fit on the target, EM registration of the source.

The target cloud is summarized by a mixture with a uniform outlier component
spread over its bounding box. Registration alternates an E-step and a
closed-form M-step, both with each covariance traced to the isotropic variance
tr(Σ_k)/3: the E-step takes the posterior of every transformed source point
under that isotropized mixture, and maximizing the expected complete-data
log-likelihood reduces to weighted Horn alignment of each point against its
precision-weighted mean of component centers. The fitted model keeps its full
covariances.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.spatial.distance import cdist
from scipy.special import logsumexp
from scipy.stats import multivariate_normal

from ..alignment import CorrespondenceSet, weighted_horn, weighted_objective
from ..eoe.weights import OverlapWeights, PenaltyConstants, calc_omega_weights
from ..errors import GeometryError, ModelOutsideOverlapError, NoModelSupportError, NoOverlapSupportError
from ..geometry import PointCloud, RigidTransform, SensorFov, transform_delta
from .base import (
    EXT_WEIGHT_FLOOR,
    BaseRegistrar,
    IterationRecord,
    RegistrationResult,
    resolve_ext_weights,
)

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
SIMPLEX_TOLERANCE = 1e-9
MIN_EXTENT = 1e-6
MIN_COMPONENTS = 8
MAX_COMPONENTS = 256
POINTS_PER_COMPONENT = 100


def _floor_covariance(covariance: np.ndarray) -> np.ndarray:
    """Clamp eigenvalues of a symmetric matrix to at least the variance floor."""
    covariance = (covariance + covariance.T) / 2.0
    values, vectors = np.linalg.eigh(covariance)
    if values.min() >= VARIANCE_FLOOR:
        return covariance
    floored = (vectors * np.maximum(values, VARIANCE_FLOOR)) @ vectors.T
    return (floored + floored.T) / 2.0


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """K Gaussian components plus an optional uniform outlier component.

    Attributes:
        weights: π_k for each component
        means: μ_k, shape (K, 3), meters
        covariances: Σ_k, shape (K, 3, 3), m²
        outlier_weight: π₀ of the uniform component
        outlier_volume: Volume (m³) the uniform component is spread over
        log_likelihood_trace: Observed-data log-likelihood per EM iteration of the fit
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    outlier_weight: float = 0.0
    outlier_volume: float = 1.0
    log_likelihood_trace: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        means = np.array(self.means, dtype=np.float64).reshape(-1, 3)
        covariances = np.array(self.covariances, dtype=np.float64).reshape(-1, 3, 3)
        if not len(weights) == len(means) == len(covariances) or len(weights) == 0:
            raise GeometryError('mixture needs matching, non-empty weights, means and covariances')
        if np.any(weights < 0.0) or not 0.0 <= self.outlier_weight < 1.0:
            raise GeometryError('mixture weights must be >= 0 and the outlier weight in [0, 1)')
        total = float(weights.sum()) + self.outlier_weight
        if abs(total - 1.0) > SIMPLEX_TOLERANCE:
            raise GeometryError(f'mixture weights must sum to 1, got {total}')
        if not self.outlier_volume > 0.0:
            raise GeometryError(f'outlier volume must be > 0, got {self.outlier_volume}')
        if not np.allclose(covariances, np.transpose(covariances, (0, 2, 1)), atol=1e-12):
            raise GeometryError('covariances must be symmetric')
        if np.linalg.eigvalsh(covariances).min() < VARIANCE_FLOOR * (1.0 - 1e-6):
            raise GeometryError(f'covariance eigenvalues must be >= {VARIANCE_FLOOR}')
        for name, array in (('weights', weights), ('means', means), ('covariances', covariances)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        object.__setattr__(self, 'log_likelihood_trace', tuple(self.log_likelihood_trace))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def with_outlier(self, outlier_weight: float, volume: float) -> 'GaussianMixture':
        """Rescale component weights to make room for a uniform outlier component."""
        if not 0.0 <= outlier_weight < 1.0:
            raise GeometryError(f'outlier weight must lie in [0, 1), got {outlier_weight}')
        weights = self.weights / self.weights.sum() * (1.0 - outlier_weight)
        return GaussianMixture(weights, self.means, self.covariances, outlier_weight, volume,
                               self.log_likelihood_trace)

    def with_weights(self, weights: np.ndarray, outlier_weight: float) -> 'GaussianMixture':
        return GaussianMixture(weights, self.means, self.covariances, outlier_weight,
                               self.outlier_volume, self.log_likelihood_trace)

    def log_joint(self, points: np.ndarray) -> np.ndarray:
        """log(π_k · p(x | k)) for every point and component; outlier column last."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        columns = np.empty((len(points), self.n_components + 1))
        with np.errstate(divide='ignore'):
            log_weights = np.log(self.weights)
            for k in range(self.n_components):
                columns[:, k] = log_weights[k] + np.atleast_1d(
                    multivariate_normal.logpdf(points, self.means[k], self.covariances[k])
                )
            columns[:, -1] = np.log(self.outlier_weight) - math.log(self.outlier_volume)
        return columns

    @property
    def isotropic_variances(self) -> np.ndarray:
        """tr(Σ_k)/3 per component (m²)."""
        return np.trace(self.covariances, axis1=1, axis2=2) / 3.0

    def isotropic_log_joint(self, points: np.ndarray) -> np.ndarray:
        """As `log_joint`, with each Σ_k replaced by tr(Σ_k)/3 · I."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        variances = self.isotropic_variances
        columns = np.empty((len(points), self.n_components + 1))
        with np.errstate(divide='ignore'):
            columns[:, :-1] = (np.log(self.weights)
                               - 0.5 * cdist(points, self.means, 'sqeuclidean') / variances
                               - 1.5 * np.log(2.0 * math.pi * variances))
            columns[:, -1] = np.log(self.outlier_weight) - math.log(self.outlier_volume)
        return columns

    def log_likelihood(self, points: np.ndarray) -> float:
        return float(logsumexp(self.log_joint(points), axis=1).sum())


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """N×(K+1) posterior matrix, outlier column last; rows sum to 1."""

    matrix: np.ndarray
    log_likelihood: float

    @property
    def components(self) -> np.ndarray:
        return self.matrix[:, :-1]

    @property
    def outlier(self) -> np.ndarray:
        return self.matrix[:, -1]


def responsibilities(model: GaussianMixture, points: np.ndarray, isotropic: bool = False) -> Responsibilities:
    log_joint = model.isotropic_log_joint(points) if isotropic else model.log_joint(points)
    log_norm = logsumexp(log_joint, axis=1, keepdims=True)
    matrix = np.exp(log_joint - log_norm)
    return Responsibilities(matrix, float(log_norm.sum()))


def default_component_count(n_points: int, points_per_component: int = POINTS_PER_COMPONENT) -> int:
    """⌈N/points_per_component⌉ clamped to [8, 256], never more than N."""
    count = min(max(math.ceil(n_points / points_per_component), MIN_COMPONENTS), MAX_COMPONENTS)
    return max(1, min(count, n_points))


def _initial_means(points: np.ndarray, k: int, seed: int) -> np.ndarray:
    if k == 1:
        return points.mean(axis=0, keepdims=True)
    with warnings.catch_warnings():
        # An empty k-means cluster only seeds a component; EM moves it afterwards
        warnings.simplefilter('ignore', UserWarning)
        centroids, _ = kmeans2(points, k, iter=10, minit='++', seed=seed)
    return centroids


def fit_gmm(cloud: PointCloud, k: int, seed: int = 0, max_iterations: int = 100,
            tolerance: float = 1e-6) -> GaussianMixture:
    """Fit a K-component mixture by EM from a seeded k-means++ initialization.

    Iteration stops once the relative log-likelihood improvement drops below
    `tolerance` or after `max_iterations`. Covariance eigenvalues are clamped
    to the 1e-6 m² variance floor in every M-step.

    Raises:
        GeometryError: k < 1 or fewer points than components
    """
    if k < 1:
        raise GeometryError(f'component count must be >= 1, got {k}')
    if len(cloud) < k:
        raise GeometryError(f'cannot fit {k} components to {len(cloud)} points')
    points = cloud.points
    n = len(points)

    means = _initial_means(points, k, seed)
    spread = _floor_covariance(np.cov(points, rowvar=False, bias=True).reshape(3, 3))
    model = GaussianMixture(np.full(k, 1.0 / k), means, np.repeat(spread[None], k, axis=0))

    trace = []
    for iteration in range(max_iterations):
        resp = responsibilities(model, points)
        trace.append(resp.log_likelihood)
        if iteration > 0:
            improvement = trace[-1] - trace[-2]
            if improvement < tolerance * abs(trace[-2]):
                break

        gamma = resp.components
        counts = gamma.sum(axis=0)
        weights = counts / counts.sum()
        new_means = model.means.copy()
        covariances = model.covariances.copy()
        for j in np.flatnonzero(counts > 0.0):
            new_means[j] = np.einsum('i,ij->j', gamma[:, j], points) / counts[j]
            centered = points - new_means[j]
            covariances[j] = _floor_covariance(
                np.einsum('i,ij,ik->jk', gamma[:, j], centered, centered) / counts[j]
            )
        model = GaussianMixture(weights, new_means, covariances)

    logger.info('GMM fit: %d components on %d points, %d EM iterations, log-likelihood %.6g',
                k, n, len(trace), trace[-1])
    return GaussianMixture(model.weights, model.means, model.covariances,
                           log_likelihood_trace=tuple(trace))


def bounding_volume(cloud: PointCloud) -> float:
    extent = np.ptp(cloud.points, axis=0)
    return float(np.prod(np.maximum(extent, MIN_EXTENT)))


@dataclass(frozen=True)
class GmmParams:
    """EM registrar settings.

    `n_components` of None picks ⌈N/points_per_component⌉ clamped to [8, 256].
    """

    n_components: Optional[int] = None
    points_per_component: int = POINTS_PER_COMPONENT
    outlier_weight: float = 0.05
    max_iterations: int = 50
    convergence_rot: float = 0.01
    convergence_trans: float = 1e-4
    fit_iterations: int = 100
    fit_tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.n_components is not None and self.n_components < 1:
            raise GeometryError(f'n_components must be >= 1, got {self.n_components}')
        if self.points_per_component < 1:
            raise GeometryError(f'points_per_component must be >= 1, got {self.points_per_component}')
        if not 0.0 <= self.outlier_weight < 1.0:
            raise GeometryError(f'outlier_weight must lie in [0, 1), got {self.outlier_weight}')
        if self.max_iterations < 1 or self.fit_iterations < 1:
            raise GeometryError('iteration limits must be >= 1')
        if not (self.convergence_rot > 0.0 and self.convergence_trans > 0.0):
            raise GeometryError('convergence thresholds must be > 0')

    def to_dict(self) -> dict:
        return {
            'n_components': self.n_components,
            'points_per_component': self.points_per_component,
            'outlier_weight': self.outlier_weight,
            'max_iterations': self.max_iterations,
            'convergence_rot': self.convergence_rot,
            'convergence_trans': self.convergence_trans,
            'fit_iterations': self.fit_iterations,
            'fit_tolerance': self.fit_tolerance,
            'seed': self.seed,
        }


def register_gmm(model: GaussianMixture, moving: PointCloud,
                 ext_weights: Optional[OverlapWeights] = None,
                 init: Optional[RigidTransform] = None,
                 params: Optional[GmmParams] = None) -> RegistrationResult:
    """Estimate the transform maximizing the likelihood of `moving` under `model`.

    Raises:
        NoOverlapSupportError: No moving point carries usable external weight
        NoModelSupportError: The outlier component absorbed every responsibility
    """
    params = params or GmmParams()
    if len(moving) < 3:
        raise GeometryError(f'registration needs at least 3 moving points, got {len(moving)}')
    ext = resolve_ext_weights(ext_weights, len(moving))
    active = np.flatnonzero(ext >= EXT_WEIGHT_FLOOR)
    if len(active) == 0:
        raise NoOverlapSupportError('no overlap support: every moving point is below the weight floor')

    points = moving.points[active]
    ext_active = ext[active]
    precision = 1.0 / model.isotropic_variances
    transform = init or RigidTransform.identity()
    trace = []
    converged = False
    objective = 0.0
    pair_index = np.arange(len(active))

    for iteration in range(1, params.max_iterations + 1):
        resp = responsibilities(model, transform.apply(points), isotropic=True)
        scaled = resp.components * precision
        support = scaled.sum(axis=1)
        pair_weights = support * ext_active
        if not np.any(pair_weights > 0.0):
            raise NoModelSupportError(
                f'no model support: outlier component absorbed every point at iteration {iteration}'
            )
        nonzero = np.where(support > 0.0, support, 1.0)
        virtual = PointCloud(scaled @ model.means / nonzero[:, None])
        weights = pair_weights / pair_weights.max()
        moved = transform.apply(points)
        corr = CorrespondenceSet(active, pair_index, weights,
                                 np.einsum('ij,ij->i', moved - virtual.points, moved - virtual.points))

        estimate = weighted_horn(moving, virtual, corr)
        objective = weighted_objective(estimate, moving, virtual, corr) / float(weights.sum())
        trace.append(IterationRecord(estimate, objective, corr.effective_count))
        delta = transform_delta(transform, estimate)
        transform = estimate
        logger.debug('GMM iteration %d: log-likelihood %.6g, objective %.6g, Δ %.4g° / %.4g m',
                     iteration, resp.log_likelihood, objective,
                     delta.rotation_error, delta.translation_error)
        if delta.rotation_error < params.convergence_rot and delta.translation_error < params.convergence_trans:
            converged = True
            break

    if converged:
        logger.info('GMM converged after %d iterations', len(trace))
    else:
        logger.info('GMM stopped at the iteration cap (%d)', len(trace))

    metadata = params.to_dict()
    metadata['n_components'] = model.n_components
    return RegistrationResult(
        transform=transform,
        iterations=len(trace),
        converged=converged,
        final_rmsd=math.sqrt(max(objective, 0.0)),
        trace=tuple(trace),
        algorithm='GMM',
        metadata=metadata,
    )


def reweight_model(model: GaussianMixture, fov: SensorFov, pose: RigidTransform,
                   penalties: Optional[PenaltyConstants] = None,
                   corrected_vertical: bool = False) -> GaussianMixture:
    """Restrict a mixture to the overlap region seen by the other sensor.

    Each π_k is multiplied by the overlap weight of μ_k under the sensor at
    `pose`, then all weights including π₀ are renormalized to sum to 1. A model
    whose means all pass unpenalized is returned unchanged.

    Raises:
        ModelOutsideOverlapError: Every component weight was driven to zero
    """
    factors = component_overlap_weights(model, fov, pose, penalties, corrected_vertical)
    return _apply_component_weights(model, factors.weights)


def component_overlap_weights(model: GaussianMixture, fov: SensorFov, pose: RigidTransform,
                              penalties: Optional[PenaltyConstants] = None,
                              corrected_vertical: bool = False) -> OverlapWeights:
    return calc_omega_weights(PointCloud(model.means), pose, fov, penalties,
                              corrected_vertical=corrected_vertical)


def _apply_component_weights(model: GaussianMixture, factors: np.ndarray) -> GaussianMixture:
    if np.all(factors == 1.0):
        return model
    weights = model.weights * factors
    component_total = float(weights.sum())
    if component_total <= 0.0:
        raise ModelOutsideOverlapError('model fully outside overlap: every component weight is zero')
    total = component_total + model.outlier_weight
    return model.with_weights(weights / total, model.outlier_weight / total)


class GmmRegistrar(BaseRegistrar):
    """Registrar object fitting a mixture to the target and running EM registration."""

    def __init__(self, params: Optional[GmmParams] = None):
        self.params = params or GmmParams()

    @property
    def name(self) -> str:
        return 'GMM'

    def prepare(self, target: PointCloud) -> GaussianMixture:
        params = self.params
        k = params.n_components or default_component_count(len(target), params.points_per_component)
        model = fit_gmm(target, k, seed=params.seed, max_iterations=params.fit_iterations,
                        tolerance=params.fit_tolerance)
        return model.with_outlier(params.outlier_weight, bounding_volume(target))

    def register_prepared(self, prepared: GaussianMixture, source: PointCloud,
                          ext_weights: Optional[OverlapWeights] = None,
                          init: Optional[RigidTransform] = None) -> RegistrationResult:
        return register_gmm(prepared, source, ext_weights, init, self.params)

    def restrict_to_overlap(self, prepared: GaussianMixture, target: PointCloud, pose: RigidTransform,
                            fov_source: SensorFov, penalties: PenaltyConstants,
                            corrected_vertical: bool = False,
                            workers: int = 1) -> Tuple[GaussianMixture, OverlapWeights]:
        """Reweight model components; the returned weights are per component, not per point."""
        factors = component_overlap_weights(prepared, fov_source, pose, penalties, corrected_vertical)
        return _apply_component_weights(prepared, factors.weights), factors
