"""Exception hierarchy shared by all modules.

Every error carries a machine-readable ``category`` and the process exit
code the CLI maps it to (2 = input, 3 = numeric/convergence, 4 = internal).
"""


class AdaptiveEmosError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"
    exit_code = 4


class InputError(AdaptiveEmosError, ValueError):
    """Bad user input: files, arguments, or values outside domains."""

    category = "input"
    exit_code = 2


class ParseError(InputError):
    """A file could not be parsed; points at the offending line."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class ValidationError(InputError):
    """Structurally valid input that violates a dataset invariant."""


class DatasetError(InputError):
    """The assembled dataset is unusable (too small, empty window, ...)."""


class DomainError(InputError):
    """Argument outside the mathematical domain of an operation."""


class NumericError(AdaptiveEmosError):
    """Numerical failure: singular systems, non-positive variances, ..."""

    category = "numeric"
    exit_code = 3


class ConvergenceError(NumericError):
    """An optimizer ran out of budget; ``best`` holds the best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DegenerateDataError(NumericError):
    """Data degenerate for the requested fit (constant predictor, zero variance)."""


class DriftDegeneracyError(NumericError):
    """Drift functions linearly dependent on the station set."""


class ModelError(NumericError):
    """The statistical model cannot be evaluated on this data."""
