"""
Validation utilities for the rerank_distill toolkit.

This module provides the field checks shared by record parsers and the
numeric stages.
"""

from __future__ import annotations

import math
from typing import Any

from .exceptions import ValidationError


def validate_identifier(value: Any, field: str) -> str:
    """
    Validate an opaque record identifier.

    Args:
        value: The identifier to validate.
        field: Field name for error context.

    Returns:
        The identifier.

    Raises:
        ValidationError: If the identifier is not a non-empty string.

    """
    if not isinstance(value, str) or not value:
        msg = f"{field} must be a non-empty string"
        raise ValidationError(msg, details={"field": field, "value": value})
    return value


def validate_text(value: Any, field: str, *, allow_empty: bool = False) -> str:
    """
    Validate a UTF-8 text field.

    Raises:
        ValidationError: If the value is not a string, or empty when not allowed.

    """
    if not isinstance(value, str):
        msg = f"{field} must be a string"
        raise ValidationError(msg, details={"field": field, "value": value})
    if not allow_empty and not value.strip():
        msg = f"{field} must not be empty"
        raise ValidationError(msg, details={"field": field})
    return value


def validate_finite(value: Any, field: str) -> float:
    """
    Validate and convert a finite real value.

    Args:
        value: The value to validate.
        field: Field name for error context.

    Returns:
        The value as float.

    Raises:
        ValidationError: If the value is not numeric or not finite.

    """
    if isinstance(value, bool):
        msg = f"{field} must be a number, not a boolean"
        raise ValidationError(msg, details={"field": field, "value": value})

    try:
        number = float(value)
    except (ValueError, TypeError) as exc:
        msg = f"Cannot convert {field} to float"
        raise ValidationError(
            msg, details={"field": field, "value": value, "error": str(exc)}
        ) from exc

    if not math.isfinite(number):
        msg = f"{field} must be finite"
        raise ValidationError(msg, details={"field": field, "value": number})
    return number


def validate_range(
    value: Any, field: str, low: float, high: float
) -> float:
    """
    Validate a finite value inside the closed interval ``[low, high]``.

    Raises:
        ValidationError: If the value is outside the interval.

    """
    number = validate_finite(value, field)
    if not low <= number <= high:
        msg = f"{field} must lie in [{low}, {high}]"
        raise ValidationError(
            msg, details={"field": field, "value": number, "low": low, "high": high}
        )
    return number


def validate_grade(value: Any, field: str = "grade") -> int:
    """
    Validate a relevance grade (nonnegative integer).

    Raises:
        ValidationError: If the grade is negative or not integral.

    """
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        msg = f"{field} must be an integer"
        raise ValidationError(msg, details={"field": field, "value": value})
    if isinstance(value, float) and (not math.isfinite(value) or not value.is_integer()):
        msg = f"{field} must be an integer"
        raise ValidationError(msg, details={"field": field, "value": value})
    grade = int(value)
    if grade < 0:
        msg = f"{field} cannot be negative"
        raise ValidationError(msg, details={"field": field, "value": grade})
    return grade


def ensure_unique(ids: list[str], field: str, scope: str) -> None:
    """
    Check that ``ids`` contains no duplicates.

    Raises:
        ValidationError: Naming the first duplicate.

    """
    seen: set[str] = set()
    for item in ids:
        if item in seen:
            msg = f"Duplicate {field} within {scope}"
            raise ValidationError(msg, details={"field": field, "value": item, "scope": scope})
        seen.add(item)
