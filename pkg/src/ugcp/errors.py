"""Exception hierarchy shared by every ugcp module."""


class UgcpError(Exception):
    """Base class for all errors raised by ugcp."""


class DomainError(UgcpError, ValueError):
    """Input lies outside the domain an operation is defined on."""


class ConfigError(UgcpError, ValueError):
    """Invalid configuration value or inconsistent dimensions."""


class NumericError(UgcpError, ArithmeticError):
    """A non-finite value appeared during computation."""


class ArrayFileError(UgcpError, OSError):
    """Malformed or inconsistent array file."""


class UndefinedMetricError(UgcpError):
    """A metric is undefined for the given inputs (e.g. HD95 on an empty mask)."""


class TrainingError(UgcpError, RuntimeError):
    """Training diverged."""
