"""Expected overlap estimation: field-of-view weights and the outer registration loop."""
from .weights import (
    OverlapWeights,
    PenaltyConstants,
    TimingSample,
    WeightStats,
    calc_omega_weights,
    fov_penalties,
    weight_timing_probe,
)
from .engine import EoeSchedule, OuterIterationRecord, eoe_register

__all__ = [
    'EoeSchedule',
    'OuterIterationRecord',
    'OverlapWeights',
    'PenaltyConstants',
    'TimingSample',
    'WeightStats',
    'calc_omega_weights',
    'eoe_register',
    'fov_penalties',
    'weight_timing_probe',
]
