"""Exception types shared across the package."""


class FaceLMError(Exception):
    """Base class for all package errors."""


class DimensionError(FaceLMError, ValueError):
    """Array shapes or lengths do not agree."""


class FormatError(FaceLMError, ValueError):
    """A file does not match its declared binary or JSON layout."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = None if path is None else str(path)


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class DimensionOverflowError(FormatError):
    pass


class NumericalError(FaceLMError, ArithmeticError):
    """A linear system is singular or too ill-conditioned to trust."""
