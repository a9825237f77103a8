"""Exception hierarchy shared by every module.

The CLI maps these onto its exit-code contract (2 configuration, 4 numerical).
"""


class EITError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EITError, ValueError):
    """Inconsistent or invalid parameters (e.g. electrode count vs. mesh)."""


class DomainError(EITError, ValueError):
    """An argument lies outside the domain of the operation."""


class GeometryError(EITError, ValueError):
    """Degenerate or otherwise unusable mesh geometry."""


class NumericalError(EITError, ArithmeticError):
    """A linear solve or factorization failed."""
