"""Exception types shared across the package."""


class KgplError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(KgplError):
    pass


class InvalidLabel(KgplError):
    pass


class NonFinite(KgplError):
    pass


class OutOfRange(KgplError):
    pass


class MissingPlaceholder(KgplError):
    pass


class EncoderFailure(KgplError):
    pass


class IOFailure(KgplError):
    pass


class KeyNotFound(KgplError):
    pass


class ChecksumMismatch(KgplError):
    pass


class UnsupportedFormat(KgplError):
    pass


class BadConfig(KgplError):
    pass


class BadSpec(KgplError):
    pass


class BadRatios(KgplError):
    pass


class EmptyForeground(KgplError):
    pass


class EmptyMask(KgplError):
    pass


class ChannelMismatch(KgplError):
    pass


class MissingAttributes(KgplError):
    pass


class Divergence(KgplError):
    pass


class MismatchedClasses(KgplError):
    pass
