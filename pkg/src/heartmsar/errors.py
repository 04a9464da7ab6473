"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: data/format/config problems exit
with 2, numerical failures with 3.
"""


class HeartMsarError(Exception):
    """Base class for all package errors."""


class FormatError(HeartMsarError):
    """A file does not conform to its declared on-disk format."""


class ValidationError(HeartMsarError):
    """Input data violates a documented precondition or invariant."""


class ConfigError(HeartMsarError):
    """A configuration value is out of range or inconsistent."""


class NumericalError(HeartMsarError):
    """Inference or training reached a numerically degenerate state."""


class EstimationError(HeartMsarError):
    """A signal-derived estimate (e.g. heart rate) could not be formed."""
