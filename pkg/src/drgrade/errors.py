"""Exception hierarchy shared across the package."""


class DrGradeError(Exception):
    """Base class for all drgrade errors."""


class ShapeError(DrGradeError, ValueError):
    """Tensor shapes or extents violate an operation's contract."""


class ConfigError(DrGradeError, ValueError):
    """Invalid or inconsistent configuration values."""


class DataError(DrGradeError, ValueError):
    """Malformed manifest rows, undecodable images, bad labels."""


class CheckpointError(DrGradeError, ValueError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class NumericalError(DrGradeError, ArithmeticError):
    """Non-finite loss or gradients encountered during training."""
