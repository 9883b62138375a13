"""Exception hierarchy shared by every module."""

from __future__ import annotations


class DomainError(ValueError):
    """An input is outside the domain where the operation is defined."""


class FormatError(ValueError):
    """A response does not follow the tagged output grammar.

    ``region`` holds the offending piece of text (possibly empty) so callers
    can report it; scoring code maps any ``FormatError`` to a format reward of 0.
    """

    def __init__(self, message: str, region: str = ""):
        super().__init__(message)
        self.region = region


class MissingTag(FormatError):
    pass


class DuplicateTag(FormatError):
    pass


class MalformedSpanList(FormatError):
    pass


class UnknownAnswerLetter(FormatError):
    pass


class ConcatenationMismatch(DomainError):
    """Token strings do not reconstruct the response text."""


class ClientError(RuntimeError):
    """Base class for policy-client transport failures."""


class ClientTimeout(ClientError):
    pass


class ClientProtocolError(ClientError):
    pass
