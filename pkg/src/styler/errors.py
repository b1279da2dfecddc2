"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, ImageIOError -> 3,
NumericAbort -> 4. Everything else is a plain failure.
"""


class StylerError(Exception):
    """Base class for all package errors."""


class InvalidInputError(StylerError):
    """An operation was called with inputs violating its contract."""


class ConfigError(StylerError):
    """Bad or inconsistent configuration (files, profiles, checkpoints)."""


class ImageIOError(StylerError):
    """A file could not be read, decoded, or written."""


class ArchiveError(StylerError):
    """A tensor archive is malformed or missing an expected entry."""


class NumericAbort(StylerError):
    """Training hit a non-finite loss; the last good checkpoint is kept."""
