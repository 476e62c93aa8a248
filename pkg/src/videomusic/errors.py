"""Exception types shared across the package."""


class VideoMusicError(Exception):
    """Base class for all package errors."""


class ConfigError(VideoMusicError, ValueError):
    """Invalid configuration, dimension mismatch or unknown option."""


class DecodeError(VideoMusicError, OSError):
    """A media file could not be opened or decoded."""


class EmptyInputError(VideoMusicError, ValueError):
    """An operation received an input with nothing in it."""


class FormatError(VideoMusicError, ValueError):
    """Serialized or interleaved data does not match its declared layout."""


class NumericError(VideoMusicError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class PairingError(VideoMusicError, ValueError):
    """Two collections that must be paired row by row are not."""


class DataError(VideoMusicError, ValueError):
    """Input data is missing a required field or is out of range."""


class StageError(VideoMusicError, RuntimeError):
    """An external adapter failed while processing one record."""
