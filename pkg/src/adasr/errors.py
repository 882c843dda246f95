"""Exception types shared across the package."""


class AdasrError(Exception):
    """Base class so the CLI can catch everything we raise on purpose."""


class DimensionError(AdasrError, ValueError):
    """Tensor extents incompatible with the requested operation."""


class ParameterError(AdasrError, ValueError):
    """A numeric argument is outside its legal range."""


class ConfigurationError(AdasrError, ValueError):
    """Invalid or inconsistent run configuration."""


class ContractViolation(AdasrError, RuntimeError):
    """An API precondition was broken by the caller."""


class SamplingError(AdasrError, ValueError):
    """Requested sample locations do not fit the tensor they index."""


class UnsupportedSizeError(AdasrError, ValueError):
    """Transform size not supported (FFT needs powers of two)."""


class DomainError(AdasrError, ValueError):
    """Array values outside the expected domain (e.g. non-binary mask)."""


class FormatError(AdasrError, ValueError):
    """Malformed container file."""


class LengthError(FormatError):
    """Container payload shorter than the header promises."""


class VersionError(FormatError):
    """Unknown container version or dtype code."""


class TrainingDiverged(AdasrError, RuntimeError):
    """A loss term became non-finite; training aborts rather than skipping."""
