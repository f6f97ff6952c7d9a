"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class DomainError(ValueError):
    """Argument outside the domain where a formula is defined."""


class NumericalFailure(ArithmeticError):
    """Riccati recursion or closed-loop rollout produced unusable numbers.

    ``step`` is the 1-based time step at which the problem was detected, if known.
    """

    def __init__(self, message, step=None, params=None):
        super().__init__(message)
        self.step = step
        self.params = params


class NoSurgeError(ValueError):
    pass


class FitFailure(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []


class RecordingError(ValueError):
    """Malformed or non-uniform recording file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
