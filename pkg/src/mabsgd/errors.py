"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument breaks an operation's precondition (wrong shape, bad index, ...)."""


class ConfigurationError(ValueError):
    """A run or sampler configuration cannot be honoured."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else [message]


class InfiniteVarianceError(ArithmeticError):
    """A point with positive gradient mass was given zero sampling probability."""


class LibsvmParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class TraceSchemaError(ValueError):
    """Trace or summary file written by an incompatible schema version."""
