"""Exception hierarchy shared by all modules."""


class SpecCtrlError(Exception):
    """Base class for toolkit errors."""


class InvalidArgument(SpecCtrlError, ValueError):
    pass


class SingularShiftError(SpecCtrlError):
    """Raised when ``A - sigma*I`` is singular to working precision."""

    def __init__(self, shift, message=None):
        self.shift = shift
        super().__init__(message or f"operator is singular at shift {shift!r}")


class ConvergenceFailure(SpecCtrlError):
    """An iteration hit its cap. ``estimate`` holds the best value reached."""

    def __init__(self, message, estimate=None, vector=None, iterations=None):
        super().__init__(message)
        self.estimate = estimate
        self.vector = vector
        self.iterations = iterations


class IndefiniteOperatorError(SpecCtrlError):
    pass


class IllPosedError(SpecCtrlError):
    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class DataError(SpecCtrlError):
    pass


class DependencyError(SpecCtrlError):
    pass
