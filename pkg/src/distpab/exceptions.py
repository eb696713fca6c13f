"""Exception hierarchy shared across the package."""


class DistpabError(Exception):
    """Base class for all package errors."""


class DimensionError(DistpabError, ValueError):
    """Operands have incompatible shapes."""


class InvalidAxisError(DistpabError, ValueError):
    """Reflection axis outside ``[1, n]``."""


class ConstantAttributeError(DistpabError, ValueError):
    """An attribute has (numerically) zero spread."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"attribute {column!r} is constant")


class InsufficientRowsError(DistpabError, ValueError):
    pass


class InvalidConfigError(DistpabError, ValueError):
    pass


class SingularFitError(DistpabError, ArithmeticError):
    pass


class LabelRangeError(DistpabError, ValueError):
    pass


class DatasetError(DistpabError, ValueError):
    """Malformed dataset file."""


class ProtocolError(DistpabError):
    """Base class for wire protocol failures."""


class BadMagicError(ProtocolError):
    pass


class BadVersionError(ProtocolError):
    pass


class TruncatedFrameError(ProtocolError):
    pass


class OversizeFrameError(ProtocolError):
    pass


class UnknownMessageTypeError(ProtocolError):
    pass


class ProtocolStateError(ProtocolError):
    """A message arrived that the current session state does not allow."""


class RemoteError(ProtocolError):
    """The peer sent an ERROR frame."""


class SessionAborted(ProtocolError):
    """Coordinator gave up on the session; ``report`` holds what was collected."""

    def __init__(self, reason, report=None):
        self.reason = reason
        self.report = report
        super().__init__(reason)
