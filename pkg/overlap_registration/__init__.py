"""
Overlap Registration

Rigid point cloud registration for partially overlapping scans: ICP and
Gaussian-mixture registrars, expected-overlap weighting from sensor
fields-of-view, synthetic view generation and a benchmark CLI.
"""

from .eoe import EoeSchedule, OverlapWeights, PenaltyConstants, calc_omega_weights, eoe_register
from .errors import OverlapRegError
from .geometry import PointCloud, PoseError, RigidTransform, SensorFov, pose_error_euler
from .registration import BaseRegistrar, GmmRegistrar, IcpRegistrar, RegistrationResult, make_registrar

__version__ = "0.1.0"
__all__ = [
    "BaseRegistrar",
    "EoeSchedule",
    "GmmRegistrar",
    "IcpRegistrar",
    "OverlapRegError",
    "OverlapWeights",
    "PenaltyConstants",
    "PointCloud",
    "PoseError",
    "RegistrationResult",
    "RigidTransform",
    "SensorFov",
    "calc_omega_weights",
    "eoe_register",
    "make_registrar",
    "pose_error_euler",
]
