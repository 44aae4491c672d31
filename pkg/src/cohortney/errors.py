"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries the category it
belongs to.
"""

from __future__ import annotations


class CohortneyError(Exception):
    """Base class for all package errors."""

    category = "internal"


class ValidationError(CohortneyError, ValueError):
    category = "validation"


class MalformedInputError(ValidationError):
    """Input data violates a structural rule (ordering, parse failure)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DomainError(ValidationError):
    """An argument is outside the domain of the operation."""


class ConfigError(ValidationError):
    """A configuration object is inconsistent."""


class NoCohortError(CohortneyError, LookupError):
    category = "validation"


class IndexFormatError(CohortneyError):
    """Persisted index cannot be decoded."""

    category = "io"


class ChecksumError(IndexFormatError):
    pass


class VersionError(IndexFormatError):
    pass


class IntegrityError(CohortneyError):
    """Cross-references between objects do not resolve."""

    category = "invariant"


class InvariantError(CohortneyError):
    category = "invariant"
