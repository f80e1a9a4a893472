"""Exception hierarchy shared by every module of the package."""


class TPowerError(Exception):
    """Base class for domain errors (CLI exit code 1)."""


class ShapeError(TPowerError, ValueError):
    pass


class InvalidExponentError(TPowerError, ValueError):
    pass


class UnsupportedExponentError(TPowerError, ValueError):
    pass


class ZeroInputError(TPowerError, ValueError):
    pass


class InvalidKError(TPowerError, ValueError):
    pass


class DegenerateIterateError(TPowerError, RuntimeError):
    """Raised when the attack iterate collapses to zero and a restart did not help."""


class EmptyDataError(TPowerError, ValueError):
    pass


class UndefinedASRError(TPowerError, ValueError):
    """Attack success rate requested on a set with no correctly classified samples."""


class InvalidWindowError(TPowerError, ValueError):
    pass


class ChannelMismatchError(TPowerError, ValueError):
    pass


class TooLargeError(TPowerError, ValueError):
    pass


class CutPointError(TPowerError, KeyError):
    pass


class FormatError(TPowerError, ValueError):
    """Malformed or unsupported file contents."""


class ConfigError(TPowerError, ValueError):
    """Config document failed schema validation (CLI exit code 2)."""
