"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1,
data-format problems exit 2, numeric failures exit 3.
"""


class EmbalignError(Exception):
    """Base class for package errors."""


class ShapeError(EmbalignError, ValueError):
    """Array dimensions do not conform to the operation's contract."""


class DomainError(EmbalignError, ValueError):
    """A scalar or structural argument is outside its allowed domain."""


class NumericError(EmbalignError, ArithmeticError):
    """A computation produced NaN/inf or diverged."""


class DataFormatError(EmbalignError, ValueError):
    """A file failed structural validation (magic, digest, payload size)."""


class ConfigError(EmbalignError, ValueError):
    """A run configuration is malformed or carries unknown keys."""


class IntegrityError(EmbalignError, ValueError):
    """A cross-artifact consistency check failed (e.g. bank digest mismatch)."""


class UnsupportedScenarioError(EmbalignError, ValueError):
    """The requested analysis has no closed form for this world kind."""
