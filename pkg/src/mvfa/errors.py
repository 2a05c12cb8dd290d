"""Exception hierarchy shared across the package."""


class MvfaError(Exception):
    """Base class for faults raised by this package."""


class ShapeError(MvfaError):
    """Tensor shapes are inconsistent for the requested operation."""


class ConfigError(MvfaError):
    """Invalid run configuration or command usage."""


class DataError(MvfaError):
    """Dataset files are missing, corrupt, or inconsistent."""


class VerificationError(MvfaError):
    """A self-check oracle reported a violation."""
