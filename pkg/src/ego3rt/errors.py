"""Exception taxonomy shared by the whole package.

The CLI maps these onto exit codes: ConfigError -> 2, NumericError -> 3.
"""


class Ego3rtError(Exception):
    """Base class for all package errors."""


class ShapeError(Ego3rtError):
    """Operands have incompatible extents."""


class DomainError(Ego3rtError):
    """An argument lies outside the operation's domain."""


class NumericError(Ego3rtError):
    """A computation produced non-finite values."""


class ConfigError(Ego3rtError):
    """Invalid configuration or incompatible checkpoint."""


class ProjectionSingularError(NumericError):
    """Camera-frame depth too close to zero for a perspective divide."""
