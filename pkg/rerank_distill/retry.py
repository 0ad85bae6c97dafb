"""
Retry utilities for the rerank_distill toolkit.

This module provides exponential backoff for async teacher calls with a
per-call retry budget.
"""

from __future__ import annotations

import asyncio
import logging
from typing import TYPE_CHECKING, Any, TypeVar

from .const import DEFAULT_MAX_BACKOFF_SECONDS
from .exceptions import RetryableError

if TYPE_CHECKING:
    from collections.abc import Awaitable, Callable

_LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


def backoff_delay(attempt: int, backoff_factor: float, max_delay: float) -> float:
    """Return the sleep before retry ``attempt`` (0-based)."""
    return min(backoff_factor * (2**attempt), max_delay)


async def call_with_backoff(
    func: Callable[[], Awaitable[T]],
    *,
    max_retries: int,
    backoff_factor: float = 1.0,
    max_delay: float = DEFAULT_MAX_BACKOFF_SECONDS,
    retry_on: tuple[type[Exception], ...] = (RetryableError,),
    sleep: Callable[[float], Awaitable[Any]] = asyncio.sleep,
    name: str | None = None,
) -> T:
    """
    Await ``func`` until it succeeds or the retry budget is spent.

    Args:
        func: Zero-argument coroutine factory, called once per attempt.
        max_retries: Retry attempts after the first call.
        backoff_factor: Base delay multiplier for exponential backoff.
        max_delay: Maximum delay between retries in seconds.
        retry_on: Tuple of exception types to retry on.
        sleep: Awaitable sleep, replaceable in tests.
        name: Label used in log lines.

    Returns:
        The first successful result.

    Raises:
        Exception: The last failure once retries are exhausted, or any
            failure not listed in ``retry_on`` immediately.

    """
    label = name or getattr(func, "__name__", "call")

    for attempt in range(max_retries + 1):
        try:
            return await func()
        except retry_on as exc:
            if attempt == max_retries:
                raise

            delay = backoff_delay(attempt, backoff_factor, max_delay)
            _LOGGER.warning(
                "Attempt %d/%d failed for %s, retrying in %.2f seconds: %s",
                attempt + 1,
                max_retries + 1,
                label,
                delay,
                str(exc),
            )
            await sleep(delay)

    msg = "Unexpected error in retry logic"
    raise RuntimeError(msg)
