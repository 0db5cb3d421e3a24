"""Exception types raised across tfdmnet.

Everything derives from the builtin ValueError / RuntimeError so callers that
only care about "bad input" versus "run went wrong" can keep catching those.
"""

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "ConfigError",
    "DataFormatError",
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "CheckpointChecksumError",
    "CheckpointConfigMismatch",
    "DivergenceError",
]


class ShapeError(ValueError):
    """Tensor dimensions do not line up."""


class NonFiniteError(ValueError):
    """A NaN or Inf reached an operation that rejects them."""


class ConfigError(ValueError):
    """Network config failed validation or could not be parsed."""


class DataFormatError(ValueError):
    """A dataset file does not match its on-disk format."""


class CheckpointError(ValueError):
    """Base class for unreadable checkpoints."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


class CheckpointConfigMismatch(CheckpointError):
    pass


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
