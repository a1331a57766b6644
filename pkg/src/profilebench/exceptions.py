"""Exception hierarchy. CLI exit codes hang off these classes."""


class ProfileBenchError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ValidationError(ProfileBenchError, ValueError):
    """Input data violates a documented contract."""

    exit_code = 2


class NumericalError(ProfileBenchError, ArithmeticError):
    """A computation produced non-finite values."""

    exit_code = 3


class DivergenceError(NumericalError):
    """ODE integration left the finite range.

    ``time`` is the end time of the first step that produced a
    non-finite state.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class StageError(ProfileBenchError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
