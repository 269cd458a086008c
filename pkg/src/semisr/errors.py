"""Exception types shared across the package."""


class SemisrError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SemisrError, ValueError):
    """Array dimensions violate an operation's contract."""


class FormatError(SemisrError, ValueError):
    """Unsupported or undecodable image format."""


class CapacityError(SemisrError, ValueError):
    """A split request exceeds the number of available images."""


class ConfigError(SemisrError, ValueError):
    """Invalid or inconsistent configuration."""


class DomainError(SemisrError, ValueError):
    """A numeric input lies outside the function's domain."""


class TrainingDivergence(SemisrError, RuntimeError):
    """A loss became non-finite; training is aborted with diagnostics."""


class CheckpointMismatch(SemisrError, RuntimeError):
    """Checkpoint config does not match the requested run config."""
