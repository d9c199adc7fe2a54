"""Base abstraction and result types shared by every registrar."""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

import numpy as np

from ..eoe.weights import OverlapWeights, PenaltyConstants, calc_omega_weights
from ..errors import GeometryError
from ..geometry import PointCloud, RigidTransform, SensorFov

# Points whose external weight falls below this are left out of matching entirely
EXT_WEIGHT_FLOOR = 1e-3


@dataclass(frozen=True)
class IterationRecord:
    """Transform after one inner iteration, its objective and the pairs that produced it."""

    transform: RigidTransform
    objective: float
    effective_pairs: int


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Outcome of one registration run.

    Attributes:
        transform: Estimate mapping source points into the target frame
        iterations: Inner iterations of the (last) base registrar run
        converged: Whether the stopping rule fired before the iteration cap
        final_rmsd: Weighted RMS residual (meters) at the final transform
        trace: One IterationRecord per inner iteration
        algorithm: Display name of the registrar that produced the result
        outer_trace: EOE outer-iteration records; empty for a bare registrar run
        source_weights: Final EOE source weights, if any
        target_weights: Final EOE target (or model) weights, if any
        metadata: Effective parameters echoed into results
    """

    transform: RigidTransform
    iterations: int
    converged: bool
    final_rmsd: float
    trace: Tuple[IterationRecord, ...] = ()
    algorithm: str = ''
    outer_trace: Tuple[Any, ...] = ()
    source_weights: Optional[OverlapWeights] = None
    target_weights: Optional[OverlapWeights] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.iterations != len(self.trace):
            raise GeometryError(
                f'trace length {len(self.trace)} does not match iteration count {self.iterations}'
            )
        if not (math.isfinite(self.final_rmsd) and self.final_rmsd >= 0.0):
            raise GeometryError(f'final_rmsd must be finite and >= 0, got {self.final_rmsd}')
        object.__setattr__(self, 'trace', tuple(self.trace))
        object.__setattr__(self, 'outer_trace', tuple(self.outer_trace))

    @property
    def outer_iterations(self) -> int:
        return len(self.outer_trace)


def resolve_ext_weights(ext_weights: Optional[OverlapWeights], count: int) -> np.ndarray:
    """Per-point external weights as an array; None means all ones."""
    if ext_weights is None:
        return np.ones(count)
    if len(ext_weights) != count:
        raise GeometryError(
            f'external weights length {len(ext_weights)} does not match source size {count}'
        )
    return np.asarray(ext_weights.weights, dtype=np.float64)


class BaseRegistrar(ABC):
    """Abstract registrar that EOE can drive.

    A run is split into `prepare` (fit or index the target once) and
    `register_prepared` (estimate the transform for a source cloud, consuming
    optional per-point external weights). `restrict_to_overlap` turns a
    prepared target into one restricted to the estimated overlap region.
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """Display name used in tables and results."""
        pass

    @abstractmethod
    def prepare(self, target: PointCloud) -> Any:
        """Build whatever the registrar needs from the target cloud (index or model)."""
        pass

    @abstractmethod
    def register_prepared(self, prepared: Any, source: PointCloud,
                          ext_weights: Optional[OverlapWeights] = None,
                          init: Optional[RigidTransform] = None) -> RegistrationResult:
        """Register `source` against a prepared target.

        Args:
            prepared: Output of `prepare` or `restrict_to_overlap`
            source: Moving cloud
            ext_weights: Optional per-source-point weights in (0, 1]
            init: Initial estimate, identity if omitted

        Returns:
            RegistrationResult
        """
        pass

    def restrict_to_overlap(self, prepared: Any, target: PointCloud, pose: RigidTransform,
                            fov_source: SensorFov, penalties: PenaltyConstants,
                            corrected_vertical: bool = False,
                            workers: int = 1) -> Tuple[Any, OverlapWeights]:
        """Weight target points by whether the source sensor at `pose` could see them.

        Returns:
            (prepared target for the next run, target weights)
        """
        weights = calc_omega_weights(target, pose, fov_source, penalties,
                                     corrected_vertical=corrected_vertical, workers=workers)
        return prepared, weights

    def register(self, source: PointCloud, target: PointCloud,
                 ext_weights: Optional[OverlapWeights] = None,
                 init: Optional[RigidTransform] = None) -> RegistrationResult:
        """Prepare the target and register the source in one call."""
        return self.register_prepared(self.prepare(target), source, ext_weights, init)
