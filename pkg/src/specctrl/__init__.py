"""Resolvent norms of damped operators, observability constants and
band-limited null controls on model domains."""
from .errors import (ConvergenceFailure, DataError, DependencyError, IllPosedError,
                     IndefiniteOperatorError, InvalidArgument, SingularShiftError, SpecCtrlError)

__version__ = "0.1.0"

__all__ = ["ConvergenceFailure", "DataError", "DependencyError", "IllPosedError",
           "IndefiniteOperatorError", "InvalidArgument", "SingularShiftError", "SpecCtrlError"]
