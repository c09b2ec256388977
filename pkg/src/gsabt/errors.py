"""Exception hierarchy shared by every gsabt module."""


class GsabtError(Exception):
    """Base class for all package errors."""


class ShapeError(GsabtError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(GsabtError, ValueError):
    """A configuration value is invalid or contradictory."""


class NumericError(GsabtError, FloatingPointError):
    """A non-finite value appeared where a finite one was required."""


class DegenerateRowError(NumericError):
    """A softmax row has no finite entry left to normalize over."""


class FormatError(GsabtError, ValueError):
    """A file does not follow its binary or text format."""


class ValidationError(GsabtError, ValueError):
    """Input data (graphs, series) violates a structural invariant."""


class InsufficientDataError(GsabtError, ValueError):
    """The series is too short for the requested windows."""
