"""Exception hierarchy shared by every module."""


class SmokeSplatError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(SmokeSplatError, ValueError):
    pass


class ParseError(SmokeSplatError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(SmokeSplatError):
    pass


class DatasetError(SmokeSplatError):
    pass


class ConfigError(SmokeSplatError):
    pass


class TrainingDivergence(SmokeSplatError):
    """Raised when a loss term or gradient turns non-finite."""

    def __init__(self, term: str, message: str | None = None):
        super().__init__(message or f"non-finite value in loss term '{term}'")
        self.term = term
