"""Exception types shared across the package.

All errors subclass ValueError so callers can catch them generically.
"""


class SplatRepairError(ValueError):
    """Base class for all package errors."""


class GeometryError(SplatRepairError):
    pass


class BehindCameraError(GeometryError):
    """Raised when projecting a point at or behind the camera plane."""


class EmptyRigError(GeometryError):
    """Raised when an orbit rig would contain no cameras."""


class DomainError(SplatRepairError):
    """An argument is outside its documented domain."""


class DataError(SplatRepairError):
    """Input data is malformed (e.g. a foreground pixel without depth)."""


class PlanError(SplatRepairError):
    """A stage plan cannot be built for the given rig."""


class ConfigError(SplatRepairError):
    """Invalid or incomplete pipeline configuration."""
