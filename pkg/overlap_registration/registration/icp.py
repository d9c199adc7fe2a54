"""ICP-family registrars: plain, trimmed, fractional and IRLS variants."""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..alignment import CorrespondenceSet, weighted_horn, weighted_objective
from ..eoe.weights import OverlapWeights, PenaltyConstants, calc_omega_weights
from ..errors import DegenerateCorrespondencesError, GeometryError, NoOverlapSupportError
from ..geometry import PointCloud, RigidTransform, SensorFov, transform_delta
from ..spatial_index import NnIndex, build_index
from .base import (
    EXT_WEIGHT_FLOOR,
    BaseRegistrar,
    IterationRecord,
    RegistrationResult,
    resolve_ext_weights,
)

logger = logging.getLogger(__name__)

VARIANT_KINDS = ('plain', 'trimmed', 'fractional', 'irls')
IRLS_KERNELS = ('welsch', 'cauchy', 'huber')
DISPLAY_NAMES = {'plain': 'ICP', 'trimmed': 'TrICP', 'fractional': 'FICP', 'irls': 'IRLS-ICP'}

# ⌈f·N⌉ is taken after subtracting this, so f·N landing a hair above an integer does not round up
TRIM_EPSILON = 1e-9
MIN_IRLS_SCALE = 1e-12
FICP_MIN_PAIRS = 3


@dataclass(frozen=True)
class IcpVariant:
    """Which ICP policy to run and its parameters.

    Only the fields relevant to `kind` are used: `keep_fraction` for trimmed,
    `lambda_` for fractional, `kernel` and `scale` for irls. A `scale` of
    None means 3× the median residual of the first matching step.
    """

    kind: str = 'plain'
    keep_fraction: float = 0.85
    lambda_: float = 3.0
    kernel: str = 'welsch'
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise GeometryError(f'unknown ICP variant {self.kind!r}; expected one of {VARIANT_KINDS}')
        if not 0.0 < self.keep_fraction <= 1.0:
            raise GeometryError(f'keep_fraction must lie in (0, 1], got {self.keep_fraction}')
        if not self.lambda_ >= 0.0:
            raise GeometryError(f'lambda must be >= 0, got {self.lambda_}')
        if self.kernel not in IRLS_KERNELS:
            raise GeometryError(f'unknown IRLS kernel {self.kernel!r}; expected one of {IRLS_KERNELS}')
        if self.scale is not None and not self.scale > 0.0:
            raise GeometryError(f'IRLS scale must be > 0, got {self.scale}')

    @classmethod
    def plain(cls) -> 'IcpVariant':
        return cls('plain')

    @classmethod
    def trimmed(cls, keep_fraction: float = 0.85) -> 'IcpVariant':
        return cls('trimmed', keep_fraction=keep_fraction)

    @classmethod
    def fractional(cls, lambda_: float = 3.0) -> 'IcpVariant':
        return cls('fractional', lambda_=lambda_)

    @classmethod
    def irls(cls, kernel: str = 'welsch', scale: Optional[float] = None) -> 'IcpVariant':
        return cls('irls', kernel=kernel, scale=scale)

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    def to_dict(self) -> dict:
        data = {'kind': self.kind}
        if self.kind == 'trimmed':
            data['keep_fraction'] = self.keep_fraction
        elif self.kind == 'fractional':
            data['lambda'] = self.lambda_
        elif self.kind == 'irls':
            data['kernel'] = self.kernel
            data['scale'] = self.scale
        return data


@dataclass(frozen=True)
class IcpParams:
    max_iterations: int = 50
    convergence_rot: float = 0.01
    convergence_trans: float = 1e-4
    max_match_distance: float = math.inf
    variant: IcpVariant = field(default_factory=IcpVariant)
    workers: int = 1

    def __post_init__(self):
        if self.max_iterations < 1:
            raise GeometryError(f'max_iterations must be >= 1, got {self.max_iterations}')
        if not (self.convergence_rot > 0.0 and self.convergence_trans > 0.0):
            raise GeometryError('convergence thresholds must be > 0')
        if not self.max_match_distance > 0.0:
            raise GeometryError(f'max_match_distance must be > 0, got {self.max_match_distance}')
        if self.workers < 1:
            raise GeometryError(f'workers must be >= 1, got {self.workers}')

    def to_dict(self) -> dict:
        return {
            'max_iterations': self.max_iterations,
            'convergence_rot': self.convergence_rot,
            'convergence_trans': self.convergence_trans,
            'max_match_distance': None if math.isinf(self.max_match_distance) else self.max_match_distance,
            'variant': self.variant.to_dict(),
        }


def trim_pairs(corr: CorrespondenceSet, keep_fraction: float) -> CorrespondenceSet:
    """Keep the ⌈f·N⌉ closest pairs; ties at the cut go to the lower source index.

    The retained pairs keep their original relative order.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise GeometryError(f'keep_fraction must lie in (0, 1], got {keep_fraction}')
    if len(corr) == 0:
        return corr
    keep = min(len(corr), math.ceil(keep_fraction * len(corr) - TRIM_EPSILON))
    if keep == len(corr):
        return corr
    order = np.lexsort((corr.source_indices, corr.squared_distances))
    return corr.select(np.sort(order[:keep]))


def _frmsd_curve(corr: CorrespondenceSet, lambda_: float) -> Tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((corr.source_indices, corr.squared_distances))
    weights = corr.weights[order]
    cum_weight = np.cumsum(weights)
    cum_error = np.cumsum(weights * corr.squared_distances[order])
    counts = np.arange(1, len(corr) + 1)
    fractions = counts / len(corr)
    with np.errstate(invalid='ignore', divide='ignore'):
        rmsd = np.sqrt(cum_error / cum_weight)
    frmsd = np.where(cum_weight > 0.0, rmsd / fractions ** lambda_, np.inf)
    return order, frmsd


def ficp_select(corr: CorrespondenceSet, lambda_: float) -> Tuple[CorrespondenceSet, float]:
    """Pick the closest-pairs prefix minimizing FRMSD(f) = RMSD(f) / f^λ.

    Candidate cuts are f = k/N for k = 3..N. RMSD over a prefix is weighted by
    the pair weights; equal FRMSD values resolve to the larger fraction.

    Returns:
        (selected pairs in original order, chosen fraction)

    Raises:
        DegenerateCorrespondencesError: Fewer than three pairs
    """
    if lambda_ < 0.0:
        raise GeometryError(f'lambda must be >= 0, got {lambda_}')
    n = len(corr)
    if n < FICP_MIN_PAIRS:
        raise DegenerateCorrespondencesError(
            f'degenerate correspondences: fractional selection needs {FICP_MIN_PAIRS} pairs, got {n}'
        )
    order, frmsd = _frmsd_curve(corr, lambda_)
    candidates = frmsd[FICP_MIN_PAIRS - 1:]
    best = int(np.flatnonzero(candidates == candidates.min())[-1]) + FICP_MIN_PAIRS
    return corr.select(np.sort(order[:best])), best / n


def irls_weights(corr: CorrespondenceSet, kernel: str, scale: float) -> CorrespondenceSet:
    """Multiply each pair weight by the robust-kernel influence of its residual."""
    if not scale > 0.0:
        raise GeometryError(f'IRLS scale must be > 0, got {scale}')
    r = corr.distances
    if kernel == 'welsch':
        influence = np.exp(-(r / scale) ** 2)
    elif kernel == 'cauchy':
        influence = 1.0 / (1.0 + (r / scale) ** 2)
    elif kernel == 'huber':
        with np.errstate(divide='ignore'):
            influence = np.where(r <= scale, 1.0, scale / r)
    else:
        raise GeometryError(f'unknown IRLS kernel {kernel!r}; expected one of {IRLS_KERNELS}')
    return corr.with_weights(corr.weights * influence)


def _apply_variant(corr: CorrespondenceSet, variant: IcpVariant,
                   scale: Optional[float]) -> CorrespondenceSet:
    if variant.kind == 'trimmed':
        return trim_pairs(corr, variant.keep_fraction)
    if variant.kind == 'fractional':
        selected, fraction = ficp_select(corr, variant.lambda_)
        logger.debug('FICP kept fraction %.3f of %d pairs', fraction, len(corr))
        return selected
    if variant.kind == 'irls':
        return irls_weights(corr, variant.kernel, scale)
    return corr


def register_icp(source: PointCloud, target: PointCloud, params: Optional[IcpParams] = None,
                 ext_weights: Optional[OverlapWeights] = None,
                 init: Optional[RigidTransform] = None,
                 index: Optional[NnIndex] = None) -> RegistrationResult:
    """Alternate nearest-neighbor matching and weighted Horn alignment.

    Each iteration matches every active source point to its nearest indexed
    target point, applies the variant policy, then solves for the transform
    from the original source points to their matches. Pair weight is the
    variant weight times the external weight of the source point; source
    points with external weight below 1e-3 are not matched at all.

    Args:
        source: Moving cloud
        target: Fixed cloud
        params: Iteration limits, thresholds and variant (defaults to plain ICP)
        ext_weights: Optional per-source-point weights
        init: Initial estimate, identity if omitted
        index: Prebuilt index over (a subset of) the target; built if omitted

    Raises:
        NoOverlapSupportError: No source point carries usable weight
        DegenerateCorrespondencesError: Propagated from the alignment step
    """
    params = params or IcpParams()
    variant = params.variant
    if len(source) < 3 or len(target) < 3:
        raise GeometryError(
            f'registration needs at least 3 points per cloud, got {len(source)} and {len(target)}'
        )
    ext = resolve_ext_weights(ext_weights, len(source))
    active = np.flatnonzero(ext >= EXT_WEIGHT_FLOOR)
    if len(active) == 0:
        raise NoOverlapSupportError('no overlap support: every source point is below the weight floor')
    if index is None:
        index = build_index(target)

    active_points = source.points[active]
    active_weights = ext[active]
    transform = init or RigidTransform.identity()
    scale = variant.scale
    trace = []
    converged = False
    objective = 0.0

    for iteration in range(1, params.max_iterations + 1):
        matched, distances = index.query(transform.apply(active_points), workers=params.workers)
        corr = CorrespondenceSet(active, matched, active_weights, distances ** 2)
        if math.isfinite(params.max_match_distance):
            corr = corr.select(distances <= params.max_match_distance)
        if variant.kind == 'irls' and scale is None:
            scale = max(3.0 * float(np.median(corr.distances)) if len(corr) else 0.0, MIN_IRLS_SCALE)
            logger.debug('IRLS scale set to %.6g from initial residuals', scale)
        corr = _apply_variant(corr, variant, scale)
        if corr.effective_count == 0:
            raise NoOverlapSupportError(
                f'no overlap support: no weighted correspondences at iteration {iteration}'
            )

        estimate = weighted_horn(source, target, corr)
        objective = weighted_objective(estimate, source, target, corr) / float(corr.weights.sum())
        trace.append(IterationRecord(estimate, objective, corr.effective_count))
        delta = transform_delta(transform, estimate)
        transform = estimate
        logger.debug('%s iteration %d: objective %.6g, %d pairs, Δ %.4g° / %.4g m',
                     variant.display_name, iteration, objective, corr.effective_count,
                     delta.rotation_error, delta.translation_error)
        if delta.rotation_error < params.convergence_rot and delta.translation_error < params.convergence_trans:
            converged = True
            break

    if converged:
        logger.info('%s converged after %d iterations', variant.display_name, len(trace))
    else:
        logger.info('%s stopped at the iteration cap (%d)', variant.display_name, len(trace))

    metadata = params.to_dict()
    if variant.kind == 'irls':
        metadata['variant']['scale'] = scale
    return RegistrationResult(
        transform=transform,
        iterations=len(trace),
        converged=converged,
        final_rmsd=math.sqrt(max(objective, 0.0)),
        trace=tuple(trace),
        algorithm=variant.display_name,
        metadata=metadata,
    )


@dataclass(frozen=True, eq=False)
class PreparedTarget:
    """Target cloud with the index used for matching (possibly gated to a subset)."""

    cloud: PointCloud
    index: NnIndex


class IcpRegistrar(BaseRegistrar):
    """Registrar object wrapping register_icp for one variant."""

    def __init__(self, params: Optional[IcpParams] = None):
        self.params = params or IcpParams()

    @property
    def name(self) -> str:
        return self.params.variant.display_name

    def prepare(self, target: PointCloud) -> PreparedTarget:
        return PreparedTarget(target, build_index(target))

    def register_prepared(self, prepared: PreparedTarget, source: PointCloud,
                          ext_weights: Optional[OverlapWeights] = None,
                          init: Optional[RigidTransform] = None) -> RegistrationResult:
        return register_icp(source, prepared.cloud, self.params, ext_weights, init,
                            index=prepared.index)

    def restrict_to_overlap(self, prepared: PreparedTarget, target: PointCloud, pose: RigidTransform,
                            fov_source: SensorFov, penalties: PenaltyConstants,
                            corrected_vertical: bool = False,
                            workers: int = 1) -> Tuple[PreparedTarget, OverlapWeights]:
        """Gate the NN index to target points the source sensor could plausibly see."""
        weights = calc_omega_weights(target, pose, fov_source, penalties,
                                     corrected_vertical=corrected_vertical, workers=workers)
        visible = weights.weights >= EXT_WEIGHT_FLOOR
        if visible.all():
            return prepared, weights
        if not visible.any():
            raise NoOverlapSupportError('no overlap support: every target point is below the weight floor')
        return PreparedTarget(target, build_index(target, visible)), weights
