"""Exception hierarchy shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not line up."""


class BoundsError(IndexError):
    """Slice indices fall outside the valid range."""


class StateError(RuntimeError):
    """An object is in the wrong lifecycle state (frozen vs. trainable, train vs. infer form)."""


class DegenerateBatchError(ValueError):
    """Batch statistics requested over fewer than two rows."""


class ValidationError(ValueError):
    """A configuration or argument violates a documented invariant."""


class UnsupportedConfigError(ValueError):
    """The requested configuration is valid but not supported by this code path."""


class EquivalenceError(RuntimeError):
    """A rewritten layer disagrees with its source beyond tolerance."""


class FormatError(ValueError):
    """A weight file is not in the expected format."""


class CorruptionError(FormatError):
    """A weight file is truncated or internally inconsistent."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """A weight file carries an unknown format version."""
