"""Exception hierarchy shared across the package.

The CLI maps ``UsageError``/``ConfigError`` to exit code 2 and
``NumericError`` to exit code 3.
"""


class UsageError(ValueError):
    """Bad arguments: shape mismatch, empty input, invalid weights."""


class ConfigError(ValueError):
    """Configuration cannot be satisfied (too few identities, bad names...)."""


class DataParseError(ValueError):
    """Malformed feature file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(ValueError):
    """Well-formed input with invalid content (e.g. non-finite values)."""


class EvaluationError(ValueError):
    """Retrieval evaluation cannot proceed (query without ground truth)."""


class NumericError(ArithmeticError):
    """Non-finite values encountered during training."""


class SolverError(NumericError):
    """Inner optimisation diverged."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
