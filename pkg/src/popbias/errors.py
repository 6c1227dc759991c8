"""Exception types raised across the toolkit.

The CLI maps these onto process exit codes: ``ConfigError`` -> 1,
``DataError`` -> 2, ``TrainingDivergence`` -> 3.
"""


class PopbiasError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(PopbiasError, ValueError):
    """Invalid configuration or argument values."""


class DataError(PopbiasError, ValueError):
    """Unreadable, malformed or empty input data."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingDivergence(PopbiasError, RuntimeError):
    """Factor values became non-finite or exceeded the divergence bound."""

    def __init__(self, epoch: int, detail: str = ""):
        self.epoch = epoch
        msg = f"training diverged at epoch {epoch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
