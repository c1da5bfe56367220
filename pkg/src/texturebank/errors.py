"""Exception hierarchy shared across the package."""


class TextureBankError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateImageError(TextureBankError):
    """An operation would produce or received a zero-sized image."""


class EmptyFieldError(TextureBankError):
    """Feature extraction yielded no descriptor cells (image too small)."""


class EmptyRegionError(TextureBankError):
    """A region mask selected no descriptor cells."""


class EmptyLadderError(TextureBankError):
    """No scale factor survives the area cap."""


class FormatError(TextureBankError):
    """Malformed binary or text artifact."""


class BadMagicError(FormatError):
    """File does not start with the expected magic tag."""


class UnsupportedVersionError(FormatError):
    """File version is not recognized by this reader."""


class TruncatedError(FormatError):
    """File ends before the declared payload is complete."""


class ChecksumError(FormatError):
    """Stored section checksum does not match the payload."""


class DimensionError(TextureBankError):
    """Shapes of models, descriptors, or images do not chain together."""


class TrainingError(TextureBankError):
    """Invalid training inputs (too few samples, missing class, ...)."""


class ConfigError(TextureBankError):
    """Invalid or conflicting configuration."""
