"""Leader-based crowd shaping through moment tracking and a finite-horizon HJB controller."""
__version__ = "0.1.0"

from .exceptions import (  # noqa: F401
    ConfigError,
    ContractViolationError,
    CrowdShapeError,
    IllConditionedExpansionError,
    IntegrationBlowupError,
    InvalidInputError,
    NumericalFailure,
    SolverBlowupError,
)
