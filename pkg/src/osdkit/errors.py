"""Shared exception types and CLI exit codes."""


class OsdkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(OsdkitError):
    """Invalid configuration, unknown keys, or config/cache digest mismatch."""


class DataError(OsdkitError):
    """Missing or malformed input data."""


class AudioFormatError(DataError):
    """Unsupported or corrupt audio input."""


class RttmParseError(DataError):
    """Malformed RTTM annotation line."""


class TrainingDivergedError(OsdkitError):
    """Training aborted because the loss became non-finite."""


EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_DATA_ERROR = 3
EXIT_DIVERGED = 4
