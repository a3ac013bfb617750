"""Exception taxonomy shared across the package.

Every error raised by texweave derives from TexweaveError so callers can
catch the package's failures without also swallowing programming bugs.
The CLI maps configuration and dataset-layout problems to exit code 2
and everything else to exit code 1.
"""


class TexweaveError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(TexweaveError):
    """Invalid configuration value, unknown config key, or bad CLI usage."""


class DatasetLayoutError(TexweaveError):
    """Dataset directory missing or not shaped like the expected layout."""


class DataIntegrityError(TexweaveError):
    """Stored artifacts disagree with their manifest or were partially written."""


class CheckpointError(TexweaveError):
    """Checkpoint unreadable or incompatible with the requested architecture."""


class MaskSamplingError(TexweaveError):
    """Rejection sampling for noise masks exceeded its retry budget."""


class NonFiniteLossError(TexweaveError):
    """A loss component became NaN or infinite during training."""


USAGE_ERRORS = (ConfigError, DatasetLayoutError)
