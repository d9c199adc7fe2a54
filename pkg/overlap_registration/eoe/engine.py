"""Expected overlap estimation: the outer loop wrapping any base registrar.

Step 1 prepares the target once (index or mixture fit). Each outer iteration
then runs the base registrar with the current source weights (Step 2),
recomputes overlap weights for both clouds from the new estimate (Step 3),
and stops when the estimate settles (Step 4).
"""
import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from ..errors import (
    GeometryError,
    ModelOutsideOverlapError,
    NoModelSupportError,
    NoOverlapSupportError,
    OverlapRegError,
)
from ..geometry import PointCloud, PoseError, RigidTransform, SensorFov, transform_delta
from .weights import OverlapWeights, PenaltyConstants, WeightStats, calc_omega_weights

if TYPE_CHECKING:
    from ..registration.base import BaseRegistrar, RegistrationResult

logger = logging.getLogger(__name__)

SUPPORT_LOSS_ERRORS = (NoOverlapSupportError, NoModelSupportError, ModelOutsideOverlapError)


@dataclass(frozen=True)
class EoeSchedule:
    max_outer_iterations: int = 30
    delta_rot_threshold: float = 0.05
    delta_trans_threshold: float = 1e-3
    symmetric: bool = True

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise GeometryError(f'max_outer_iterations must be >= 1, got {self.max_outer_iterations}')
        if not (self.delta_rot_threshold > 0.0 and self.delta_trans_threshold > 0.0):
            raise GeometryError('EOE convergence thresholds must be > 0')

    def to_dict(self) -> dict:
        return {
            'max_outer_iterations': self.max_outer_iterations,
            'delta_rot_threshold': self.delta_rot_threshold,
            'delta_trans_threshold': self.delta_trans_threshold,
            'symmetric': self.symmetric,
        }


@dataclass(frozen=True)
class OuterIterationRecord:
    """Estimate and weight summary after one outer iteration.

    `delta` is the change from the previous outer estimate (None on the first).
    `target_weights` summarizes point weights for ICP-family registrars and
    component weights for the mixture registrar; None when not symmetric.
    """

    iteration: int
    transform: RigidTransform
    inner_iterations: int
    delta: Optional[PoseError]
    source_weights: WeightStats
    target_weights: Optional[WeightStats]

    def to_dict(self) -> dict:
        return {
            'iteration': self.iteration,
            'transform': self.transform.as_rows_3x4(),
            'inner_iterations': self.inner_iterations,
            'delta_rot_deg': None if self.delta is None else self.delta.rotation_error,
            'delta_trans_m': None if self.delta is None else self.delta.translation_error,
            'source_weights': self.source_weights.to_dict(),
            'target_weights': None if self.target_weights is None else self.target_weights.to_dict(),
        }


def _unchanged(previous: Optional[OverlapWeights], current: Optional[OverlapWeights]) -> bool:
    """True when two weight sets are identical; None stands for all ones."""
    if previous is None and current is None:
        return True
    if previous is None:
        return bool(np.all(current.weights == 1.0))
    if current is None:
        return bool(np.all(previous.weights == 1.0))
    return np.array_equal(previous.weights, current.weights)


def eoe_register(source: PointCloud, target: PointCloud, base: 'BaseRegistrar',
                 fov_source: SensorFov, fov_target: SensorFov,
                 penalties: Optional[PenaltyConstants] = None,
                 schedule: Optional[EoeSchedule] = None,
                 init: Optional[RigidTransform] = None,
                 corrected_vertical: bool = False, workers: int = 1) -> 'RegistrationResult':
    """Register `source` to `target` while estimating their overlap region.

    Weights start at one and are recomputed fresh from every new estimate:
    source points are projected into the target sensor's frame through the
    inverse estimate, and (when symmetric) target points into the source
    sensor's frame through the estimate. The loop stops when two successive
    estimates differ by less than both thresholds, when the weights reach a
    fixed point, or at `max_outer_iterations`. Only the first rule marks the
    result converged; at a weight fixed point the base run's own flag is kept.

    Args:
        source: Moving cloud, observed by the sensor with `fov_source`
        target: Fixed cloud, observed by the sensor with `fov_target`
        base: Registrar that consumes external per-point weights
        fov_source: Field-of-view of the source sensor
        fov_target: Field-of-view of the target sensor
        penalties: k0, k1, k2 (defaults 1, 1, 5)
        schedule: Outer-loop limits (defaults 30 iterations, 0.05°, 1 mm)
        init: Initial estimate, identity if omitted
        corrected_vertical: Use the boundary-continuous lower vertical term
        workers: Threads for the weight computation

    Returns:
        The last successful base result, carrying the outer trace and the
        final weights. Losing overlap or model support after a successful
        base run ends the loop early with that run's estimate, flagged not
        converged; when the target weights were the ones lost, the result
        carries no target weights.

    Raises:
        OverlapRegError: Any base registrar failure on the first outer
            iteration, or any failure other than lost support later on, with
            `outer_iteration` set
    """
    penalties = penalties or PenaltyConstants()
    schedule = schedule or EoeSchedule()
    estimate = init or RigidTransform.identity()

    prepared = base.prepare(target)
    step_target = prepared
    source_weights: Optional[OverlapWeights] = None
    target_weights: Optional[OverlapWeights] = None
    best: Optional['RegistrationResult'] = None
    outer_trace = []
    converged = False

    for outer in range(1, schedule.max_outer_iterations + 1):
        try:
            result = base.register_prepared(step_target, source, source_weights, estimate)
        except SUPPORT_LOSS_ERRORS as exc:
            exc.outer_iteration = outer
            if best is None:
                raise
            logger.warning('%s lost overlap support at outer iteration %d; keeping the previous estimate',
                           base.name, outer)
            break
        except OverlapRegError as exc:
            exc.outer_iteration = outer
            raise

        delta = None if best is None else transform_delta(estimate, result.transform)
        estimate = result.transform
        best = result

        new_source = calc_omega_weights(source, estimate.inverse(), fov_target, penalties,
                                        corrected_vertical=corrected_vertical, workers=workers)
        new_target = None
        support_lost = False
        if schedule.symmetric:
            try:
                step_target, new_target = base.restrict_to_overlap(
                    prepared, target, estimate, fov_source, penalties,
                    corrected_vertical=corrected_vertical, workers=workers,
                )
            except SUPPORT_LOSS_ERRORS as exc:
                logger.warning('%s: no target support left after outer iteration %d (%s); '
                               'keeping this estimate', base.name, outer, exc)
                support_lost = True

        record = OuterIterationRecord(
            iteration=outer,
            transform=estimate,
            inner_iterations=result.iterations,
            delta=delta,
            source_weights=new_source.stats(),
            target_weights=None if new_target is None else new_target.stats(),
        )
        outer_trace.append(record)
        logger.debug('EOE outer iteration %d: %d inner iterations, mean source weight %.4f',
                     outer, result.iterations, record.source_weights.mean)
        if support_lost:
            source_weights, target_weights = new_source, None
            break

        settled = (delta is not None
                   and delta.rotation_error < schedule.delta_rot_threshold
                   and delta.translation_error < schedule.delta_trans_threshold)
        fixed_point = _unchanged(source_weights, new_source) and _unchanged(target_weights, new_target)
        source_weights, target_weights = new_source, new_target
        if settled:
            converged = True
            break
        if fixed_point:
            converged = result.converged
            break

    if converged:
        logger.info('EOE (%s) converged after %d outer iterations', base.name, len(outer_trace))
    else:
        logger.info('EOE (%s) stopped after %d outer iterations without converging',
                    base.name, len(outer_trace))

    metadata = dict(best.metadata)
    metadata['eoe'] = {
        'penalties': penalties.to_dict(),
        'schedule': schedule.to_dict(),
        'fov_source': fov_source.to_dict(),
        'fov_target': fov_target.to_dict(),
        'corrected_vertical': corrected_vertical,
    }
    return replace(
        best,
        converged=converged,
        outer_trace=tuple(outer_trace),
        source_weights=source_weights,
        target_weights=target_weights,
        metadata=metadata,
    )
