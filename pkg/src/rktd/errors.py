"""Exception hierarchy shared by the library and the CLI."""


class KtdError(Exception):
    """Base class for all errors raised by rktd."""


class InvalidArgumentError(KtdError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class FormatError(KtdError, ValueError):
    """A file could not be parsed.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(KtdError, ArithmeticError):
    """A numerical routine produced non-finite or inconsistent output."""


class InternalConsistencyError(KtdError, RuntimeError):
    """Two internal data structures disagree (a bug, not bad input)."""
