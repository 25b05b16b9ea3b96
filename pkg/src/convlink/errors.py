"""Exception types shared across the package."""


class ConvlinkError(Exception):
    """Base class for all package-specific errors."""


class FormatError(ConvlinkError):
    """A data file does not conform to its documented format."""


class DimensionError(ConvlinkError):
    """Vector/matrix dimensions are inconsistent or degenerate."""


class SpanError(ConvlinkError):
    """A mention span does not fit inside its document."""


class InvalidEntityError(ConvlinkError):
    """An entity record is unusable (e.g. empty title)."""


class IngestError(ConvlinkError):
    """Knowledge-base ingestion failed (e.g. duplicate entity id)."""


class SpecError(ConvlinkError):
    """A synthetic corpus specification is infeasible."""


class CacheError(ConvlinkError):
    """Backward pass invoked without a matching cached forward state."""


class TrainingError(ConvlinkError):
    """Training aborted (e.g. non-finite loss)."""


class LoadError(ConvlinkError):
    """A persisted artifact cannot be loaded."""


class VersionError(LoadError):
    """A persisted artifact declares an unsupported format version."""


class ChecksumError(LoadError):
    """A persisted artifact is truncated or corrupted."""


class UsageError(ConvlinkError):
    """Bad command-line arguments."""
