"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input data violates a documented invariant or schema."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class UnusableTargetsError(InvalidInputError):
    """Targets leave zero visible matched keypoint pairs."""


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, parameter, report=None):
        super().__init__(f"non-finite gradient for parameter {parameter}")
        self.parameter = parameter
        self.report = report


class DivergenceError(RuntimeError):
    """Optimization loss blew up; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class CacheMissError(KeyError):
    """A source attention cache entry needed by the articulation pass is absent."""
