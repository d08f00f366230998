"""Exception hierarchy shared by all pmen modules."""


class PmenError(Exception):
    """Base class for all library errors."""


class ShapeError(PmenError):
    """Array arguments have inconsistent or unsupported shapes."""


class ConfigError(PmenError):
    """A configuration value is out of its legal range."""


class DataError(PmenError):
    """An input file is missing, truncated, malformed, or inconsistent."""


class UsageError(PmenError):
    """Bad command-line invocation."""


class TrainingError(PmenError):
    """Training aborted (non-finite loss, empty dataset, ...)."""


class OptimError(PmenError):
    """Optimizer received inconsistent or non-finite inputs."""


class MetricError(PmenError):
    """A metric cannot be computed from the given inputs."""


class EvalError(PmenError):
    """Model evaluation could not be completed."""


class CheckpointError(DataError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint format version is unknown."""


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint ends before the declared payload."""


class ArchMismatchError(CheckpointError):
    """Checkpoint architecture differs from the requested one."""
