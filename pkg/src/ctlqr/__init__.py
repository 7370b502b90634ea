"""Identification and LQR control of continuous-time linear systems from sampled data."""
__version__ = "0.1.0"

from .exceptions import (
    ConfigError,
    CtlqrError,
    DegenerateDataError,
    DomainError,
    InvalidArgumentError,
    NonConvergenceError,
    NumericError,
    RecoveryDomainError,
    StabilityError,
)
from .lsde import ContinuousSystem, DiscretizedSystem, NoiseModel, SampledTrajectory, discretize
from .riccati import LQRController, LqrWeights, solve_care, solve_lyapunov
from .sysid import ContinuousTimeIdentifier, MultiTrajectoryIdentifier, SysIdEstimate

__all__ = [
    "__version__",
    "ConfigError",
    "CtlqrError",
    "DegenerateDataError",
    "DomainError",
    "InvalidArgumentError",
    "NonConvergenceError",
    "NumericError",
    "RecoveryDomainError",
    "StabilityError",
    "ContinuousSystem",
    "DiscretizedSystem",
    "NoiseModel",
    "SampledTrajectory",
    "discretize",
    "LQRController",
    "LqrWeights",
    "solve_care",
    "solve_lyapunov",
    "ContinuousTimeIdentifier",
    "MultiTrajectoryIdentifier",
    "SysIdEstimate",
]
