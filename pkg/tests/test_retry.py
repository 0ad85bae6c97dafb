"""Tests for backoff and the circuit breaker."""

from __future__ import annotations

import pytest

from rerank_distill.circuit_breaker import CircuitBreaker, CircuitState
from rerank_distill.exceptions import (
    CircuitBreakerOpenError,
    ProtocolError,
    TransportError,
)
from rerank_distill.retry import backoff_delay, call_with_backoff


def test_backoff_doubles_and_caps():
    assert [backoff_delay(n, 1.0, 5.0) for n in range(5)] == [1.0, 2.0, 4.0, 5.0, 5.0]


async def test_retryable_errors_are_retried():
    attempts = []
    delays = []

    async def flaky() -> str:
        attempts.append(1)
        if len(attempts) < 3:
            msg = "connection reset"
            raise TransportError(msg)
        return "ok"

    async def sleep(delay: float) -> None:
        delays.append(delay)

    assert await call_with_backoff(flaky, max_retries=3, sleep=sleep) == "ok"
    assert delays == [1.0, 2.0]


async def test_non_retryable_errors_surface_immediately():
    attempts = []

    async def broken() -> str:
        attempts.append(1)
        msg = "bad request"
        raise ProtocolError(msg, status=400)

    with pytest.raises(ProtocolError):
        await call_with_backoff(broken, max_retries=3)
    assert len(attempts) == 1


class Clock:
    def __init__(self) -> None:
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


def test_breaker_opens_then_half_opens_after_cooldown():
    clock = Clock()
    breaker = CircuitBreaker("judge", failure_threshold=2, cooldown=10.0, clock=clock)
    breaker.record_failure()
    breaker.guard()
    breaker.record_failure()
    assert breaker.state is CircuitState.OPEN
    with pytest.raises(CircuitBreakerOpenError):
        breaker.guard()
    clock.now = 10.0
    breaker.guard()
    assert breaker.state is CircuitState.HALF_OPEN
    breaker.record_failure()
    assert breaker.state is CircuitState.OPEN


def test_success_closes_the_breaker():
    breaker = CircuitBreaker("judge", failure_threshold=1, cooldown=0.0, clock=Clock())
    breaker.record_failure()
    breaker.guard()
    breaker.record_success()
    assert breaker.state is CircuitState.CLOSED
    assert breaker.failure_count == 0
