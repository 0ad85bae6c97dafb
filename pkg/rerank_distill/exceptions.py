"""Exception classes for the rerank_distill toolkit."""

from __future__ import annotations

from typing import Any

from .const import EXIT_DATA, EXIT_TRANSPORT, EXIT_USAGE


class DistillError(Exception):
    """Base exception for the toolkit."""

    exit_code: int = EXIT_DATA

    def __init__(
        self,
        message: str,
        error_code: str | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        """Initialize the exception."""
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.__class__.__name__
        self.details = details or {}

    def __str__(self) -> str:
        """Return string representation of the exception."""
        if self.details:
            return f"{self.message} (Code: {self.error_code}, Details: {self.details})"
        return f"{self.message} (Code: {self.error_code})"


class ConfigurationError(DistillError):
    """Exception raised for configuration-related errors."""

    exit_code = EXIT_USAGE


class UsageError(ConfigurationError):
    """Exception raised for command-line usage errors."""


class DataError(DistillError):
    """Base class for problems with input or intermediate data."""

    exit_code = EXIT_DATA


class ValidationError(DataError):
    """Exception raised when a record violates a type invariant."""


class RecordParseError(DataError):
    """Exception raised for a malformed JSONL or TREC line."""

    def __init__(
        self,
        message: str,
        *,
        line: int,
        offset: int,
        path: str | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        """Initialize with the failing line number and byte offset."""
        merged = {"line": line, "offset": offset, **(details or {})}
        if path is not None:
            merged["path"] = path
        super().__init__(message, details=merged)
        self.line = line
        self.offset = offset


class JudgeParseError(DataError):
    """Exception raised when a teacher response cannot be parsed."""

    def __init__(
        self,
        message: str,
        *,
        reason: str,
        details: dict[str, Any] | None = None,
    ) -> None:
        """Initialize with a machine-readable failure reason."""
        super().__init__(message, error_code=reason, details=details)
        self.reason = reason


class UnknownTemplateError(DataError):
    """Exception raised when the mock judge sees an unrecognized prompt."""


class FitError(DataError):
    """Exception raised for invalid Bradley-Terry fit input."""


class DegenerateDistributionError(DataError):
    """Exception raised for a score set with zero variance."""


class MissingVerifierScoreError(DataError):
    """Exception raised when cross-verification runs without a verifier score."""


class IncompleteExampleError(DataError):
    """Exception raised when a training example has no surviving negative."""


class RetryableError(DistillError):
    """Base class for errors that can be retried."""

    exit_code = EXIT_TRANSPORT


class TeacherError(DistillError):
    """Base class for teacher endpoint failures."""

    exit_code = EXIT_TRANSPORT


class TransportError(TeacherError, RetryableError):
    """Exception raised for network failures and timeouts."""


class ProtocolError(TeacherError):
    """Exception raised when the endpoint answers with a non-2xx status."""

    def __init__(
        self,
        message: str,
        *,
        status: int,
        body_excerpt: str = "",
        details: dict[str, Any] | None = None,
    ) -> None:
        """Initialize with the HTTP status and a short body excerpt."""
        merged = {"status": status, "body": body_excerpt, **(details or {})}
        super().__init__(message, details=merged)
        self.status = status
        self.body_excerpt = body_excerpt


class RateLimitError(ProtocolError, RetryableError):
    """Exception raised when the endpoint rate-limits (HTTP 429)."""


class ServerError(ProtocolError, RetryableError):
    """Exception raised for HTTP 5xx responses."""


class CircuitBreakerOpenError(TeacherError):
    """Exception raised when circuit breaker is open."""
