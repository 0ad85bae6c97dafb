"""
Circuit breaker for teacher endpoints.

A breaker stops the pipeline from hammering an endpoint that keeps failing
after its retry budget is spent. Once open it fails fast until ``cooldown``
seconds have passed, then lets one trial call through.
"""

from __future__ import annotations

import time
from enum import StrEnum
from typing import TYPE_CHECKING

from .exceptions import CircuitBreakerOpenError

if TYPE_CHECKING:
    from collections.abc import Callable


class CircuitState(StrEnum):
    """Breaker states."""

    CLOSED = "closed"
    OPEN = "open"
    HALF_OPEN = "half_open"


class CircuitBreaker:
    """
    Consecutive-failure breaker guarding one endpoint.

    Attributes:
        name: Endpoint label used in error details.
        failure_threshold: Consecutive failures that open the circuit.
        cooldown: Seconds to wait before a half-open trial call.

    """

    def __init__(
        self,
        name: str,
        failure_threshold: int = 5,
        cooldown: float = 60.0,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        """
        Initialize the circuit breaker.

        Args:
            name: Endpoint label.
            failure_threshold: Number of failures to trigger open state.
            cooldown: Seconds before transitioning from OPEN to HALF_OPEN.
            clock: Monotonic time source.

        """
        self.name = name
        self.failure_threshold = failure_threshold
        self.cooldown = cooldown
        self._clock = clock
        self.failure_count = 0
        self.opened_at: float | None = None
        self.state = CircuitState.CLOSED

    def guard(self) -> None:
        """
        Raise if the circuit does not admit a request right now.

        Raises:
            CircuitBreakerOpenError: While open and still cooling down.

        """
        if self.state is not CircuitState.OPEN:
            return

        if self.opened_at is not None and self._clock() - self.opened_at >= self.cooldown:
            self.state = CircuitState.HALF_OPEN
            return

        msg = f"Circuit breaker is open for endpoint {self.name}"
        raise CircuitBreakerOpenError(
            msg,
            details={
                "endpoint": self.name,
                "failure_count": self.failure_count,
                "cooldown": self.cooldown,
            },
        )

    def record_success(self) -> None:
        """Record a successful call, closing the circuit."""
        self.failure_count = 0
        self.opened_at = None
        self.state = CircuitState.CLOSED

    def record_failure(self) -> None:
        """Record a failed call; a failed half-open trial call reopens immediately."""
        self.failure_count += 1
        if (
            self.state is CircuitState.HALF_OPEN
            or self.failure_count >= self.failure_threshold
        ):
            self.state = CircuitState.OPEN
            self.opened_at = self._clock()
