"""Exception hierarchy shared by all DCFM subpackages.

The command line maps these onto its exit codes: bad configuration or input
values exit with 2, anything touching files with 3 and numeric failures with 4.
"""

__all__ = [
    'DCFMError',
    'ConfigError',
    'ShapeError',
    'LabelError',
    'NonFiniteError',
    'DataIOError',
    'NetpbmFormatError',
    'ManifestError',
    'ModelFormatError',
    'MetricError',
]


class DCFMError(Exception):
    """Base class of every error raised on purpose by this package."""


class ConfigError(DCFMError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class ShapeError(DCFMError, ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class LabelError(DCFMError, ValueError):
    """A label map holds a class id outside [0, num_classes) that is not
    the ignore label."""


class NonFiniteError(DCFMError, ArithmeticError):
    """NaN or Inf appeared in a tensor or a loss value."""


class DataIOError(DCFMError, OSError):
    """Reading or writing an artifact failed."""


class NetpbmFormatError(DataIOError):
    """A PPM/PGM file is malformed, truncated or uses an unsupported maxval."""


class ManifestError(DataIOError):
    """A dataset manifest violates its schema or references bad files."""


class ModelFormatError(DataIOError):
    """A serialized model has the wrong magic, version or a short payload."""


class MetricError(DCFMError, ValueError):
    """A metric is undefined for its input, e.g. nothing was scored."""
