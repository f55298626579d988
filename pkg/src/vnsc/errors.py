"""Exception taxonomy shared across the codec.

The CLI maps these onto process exit codes (usage 2, ingestion/format 3,
numerical 4); library callers catch them directly.
"""


class VnscError(Exception):
    """Base class for all codec errors."""


class ConfigurationError(VnscError):
    """Invalid layer/model hyperparameters (bad shapes, strides, sizes)."""


class AlignmentError(VnscError):
    """Time-aligned inputs disagree on frame count."""


class UsageError(VnscError):
    """A call that is invalid for the selected mode or missing inputs."""


class IngestionError(VnscError):
    """Unreadable or out-of-contract input file (WAV, lips, bitstream)."""


class FormatError(IngestionError):
    """Corrupt or mismatched binary container."""


class NumericalError(VnscError):
    """Non-finite values where finite ones are required."""


class GradientCheckError(VnscError):
    """Analytic and finite-difference gradients disagree."""
