"""Exception hierarchy shared across the package."""


class EngineError(Exception):
    """Base class for every error raised by this package."""


class ZeroVector(EngineError):
    """A vector with (near-)zero norm was passed where a direction is required."""


class NonFinite(EngineError):
    """NaN or infinity encountered in numeric input."""


class DimMismatch(EngineError):
    """Embedding dimensions or matrix shapes disagree."""


class ClassOutOfRange(EngineError):
    """Class index outside [0, C)."""


class DegenerateRow(EngineError):
    """A prototype row cancelled to (near-)zero norm under residual addition."""


class ConfigInvalid(EngineError):
    """Configuration value or combination rejected by validation."""


class LabelMissing(EngineError):
    """Accuracy was requested on a stream without ground-truth labels."""


class FileFormatError(EngineError):
    """Base class for interchange-file problems."""


class BadMagic(FileFormatError):
    """File does not start with the expected magic bytes."""


class VersionMismatch(FileFormatError):
    """File version is not supported by this reader."""


class Truncated(FileFormatError):
    """File ended before the header-declared payload was read."""


class NonUnitVector(FileFormatError):
    """Stored vector deviates from unit norm beyond the load tolerance."""


class NumericAbort(EngineError):
    """A numeric error aborted a stream run; carries the failing sample index."""

    def __init__(self, sample_index: int, cause: Exception):
        super().__init__(f"sample {sample_index}: {type(cause).__name__}: {cause}")
        self.sample_index = sample_index
        self.cause = cause
