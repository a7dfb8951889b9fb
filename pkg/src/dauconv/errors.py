"""Exception types shared across the library and mapped to CLI exit codes."""


class DauConvError(Exception):
    """Base class for all library errors."""


class ConfigError(DauConvError):
    """Invalid or unknown configuration key/value."""


class DataFormatError(DauConvError):
    """Malformed dataset file (size, label range, missing file)."""


class CheckpointError(DauConvError):
    """Corrupt, truncated or unsupported-version checkpoint."""


class TrainingError(DauConvError):
    """Training aborted (non-finite gradients, bad schedule)."""
