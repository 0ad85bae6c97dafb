"""
Chat-completion access to teacher judges.

A :class:`TeacherClient` posts one user message per request to an
OpenAI-compatible ``/chat/completions`` endpoint, retries rate limits, server
errors and network failures with exponential backoff, and caches every
response in a content-addressed directory so reruns never repeat a call.
"""

from __future__ import annotations

import asyncio
import hashlib
import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Protocol

import aiohttp

from .circuit_breaker import CircuitBreaker
from .const import (
    BODY_EXCERPT_CHARS,
    DEFAULT_API_KEY_ENV,
    DEFAULT_BACKOFF_SECONDS,
    DEFAULT_BREAKER_COOLDOWN,
    DEFAULT_BREAKER_THRESHOLD,
    DEFAULT_MAX_IN_FLIGHT,
    DEFAULT_MAX_RETRIES,
    DEFAULT_TEMPERATURE,
    DEFAULT_TIMEOUT_MS,
)
from .context_logger import ContextLogger
from .exceptions import (
    ConfigurationError,
    DataError,
    ProtocolError,
    RateLimitError,
    ServerError,
    TeacherError,
    TransportError,
)
from .records import atomic_writer
from .retry import call_with_backoff

if TYPE_CHECKING:
    from collections.abc import Awaitable, Callable, Sequence

_LOGGER = logging.getLogger(__name__)

HTTP_TOO_MANY_REQUESTS = 429
HTTP_SERVER_ERROR = 500
LOCK_STRIPES = 64


@dataclass(frozen=True, slots=True)
class TeacherEndpoint:
    """Connection settings for one teacher model."""

    base_url: str
    model_name: str
    api_key_ref: str = DEFAULT_API_KEY_ENV
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    max_retries: int = DEFAULT_MAX_RETRIES
    temperature: float = DEFAULT_TEMPERATURE
    backoff_seconds: float = DEFAULT_BACKOFF_SECONDS

    def __post_init__(self) -> None:
        """Validate the endpoint settings."""
        if not self.base_url or not self.model_name:
            msg = "Teacher endpoint needs a base_url and a model name"
            raise ConfigurationError(
                msg, details={"base_url": self.base_url, "model": self.model_name}
            )
        if self.timeout_ms <= 0:
            msg = "Teacher timeout must be positive"
            raise ConfigurationError(msg, details={"timeout_ms": self.timeout_ms})
        if self.max_retries < 0:
            msg = "Teacher max_retries cannot be negative"
            raise ConfigurationError(msg, details={"max_retries": self.max_retries})
        if self.temperature < 0:
            msg = "Teacher temperature cannot be negative"
            raise ConfigurationError(msg, details={"temperature": self.temperature})

    @property
    def name(self) -> str:
        """Return a label identifying the endpoint in logs and breakers."""
        return f"{self.model_name}@{self.base_url}"

    @property
    def url(self) -> str:
        """Return the chat-completion URL."""
        return f"{self.base_url.rstrip('/')}/chat/completions"

    def with_temperature(self, temperature: float) -> TeacherEndpoint:
        """Return a copy sampling at ``temperature``."""
        return replace(self, temperature=temperature)


@dataclass(frozen=True, slots=True)
class JudgmentCacheKey:
    """
    Content hash identifying one teacher response.

    The hash covers the prompt, model and temperature. ``sample_tag``
    distinguishes repeated samples of the same prompt (votes, parse retries);
    an empty tag leaves the hash over the three request fields only.
    """

    digest: str

    @classmethod
    def for_request(
        cls,
        prompt: str,
        model_name: str,
        temperature: float,
        sample_tag: str = "",
    ) -> JudgmentCacheKey:
        """Build the key for a request."""
        fields: list[str] = [prompt, model_name, repr(float(temperature))]
        if sample_tag:
            fields.append(sample_tag)
        payload = json.dumps(fields, ensure_ascii=False, separators=(",", ":"))
        return cls(hashlib.sha256(payload.encode("utf-8")).hexdigest())


class JudgmentCache:
    """
    Directory of cached responses, one JSON file per key.

    Readers never block. Writers of the same key are serialized, and a
    response computed under the key lock is visible to every waiter. Keys
    share a fixed set of lock stripes, so long runs do not accumulate locks.
    """

    def __init__(self, directory: str | Path) -> None:
        """Initialize the cache rooted at ``directory``."""
        self.directory = Path(directory)
        self._locks = tuple(asyncio.Lock() for _ in range(LOCK_STRIPES))

    def lock_for(self, key: JudgmentCacheKey) -> asyncio.Lock:
        """Return the lock stripe guarding writes of ``key``."""
        return self._locks[int(key.digest[:8], 16) % LOCK_STRIPES]

    def _path(self, key: JudgmentCacheKey) -> Path:
        return self.directory / key.digest[:2] / f"{key.digest}.json"

    def get(self, key: JudgmentCacheKey) -> str | None:
        """Return the cached response for ``key``, or None."""
        path = self._path(key)
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError) as exc:
            msg = "Unreadable judgment cache entry"
            raise DataError(msg, details={"path": str(path), "error": str(exc)}) from exc
        return record["response"]

    def put(self, key: JudgmentCacheKey, response: str) -> None:
        """Store ``response`` under ``key``."""
        with atomic_writer(self._path(key)) as handle:
            json.dump({"key": key.digest, "response": response}, handle, ensure_ascii=False)

    async def get_or_compute(
        self, key: JudgmentCacheKey, compute: Callable[[], Awaitable[str]]
    ) -> tuple[str, bool]:
        """
        Return the cached response, computing and storing it on a miss.

        Returns:
            The response and whether it came from the cache.

        """
        cached = self.get(key)
        if cached is not None:
            return cached, True

        async with self.lock_for(key):
            cached = self.get(key)
            if cached is not None:
                return cached, True
            response = await compute()
            self.put(key, response)
            return response, False


class Teacher(Protocol):
    """Anything that answers prompts on behalf of a teacher endpoint."""

    @property
    def endpoints(self) -> tuple[TeacherEndpoint, ...]:
        """Configured endpoints, in rotation order."""

    async def complete(
        self, endpoint: TeacherEndpoint, prompt: str, *, sample_tag: str = ""
    ) -> str:
        """Return the raw response text for ``prompt``."""


def select_endpoint(
    endpoints: Sequence[TeacherEndpoint], vote_index: int
) -> TeacherEndpoint:
    """Rotate votes across the configured endpoints."""
    return endpoints[vote_index % len(endpoints)]


def extract_content(data: Any) -> str:
    """
    Return the first choice's message content from a response body.

    Raises:
        KeyError: If the body has no usable content.

    """
    content = data["choices"][0]["message"]["content"]
    if not isinstance(content, str):
        msg = "message content is not a string"
        raise KeyError(msg)
    return content


class TeacherClient:
    """
    Async chat-completion client with caching, retries and a breaker per endpoint.

    Use as an async context manager, or pass an externally managed
    ``aiohttp.ClientSession``.
    """

    def __init__(
        self,
        endpoints: Sequence[TeacherEndpoint],
        *,
        cache: JudgmentCache | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
        session: aiohttp.ClientSession | None = None,
        sleep: Callable[[float], Awaitable[Any]] = asyncio.sleep,
    ) -> None:
        """
        Initialize the client.

        Args:
            endpoints: Teacher endpoints in vote rotation order.
            cache: Response cache; None disables caching.
            max_in_flight: Upper bound on concurrent HTTP requests.
            session: Optional shared HTTP session.
            sleep: Awaitable used between retries.

        Raises:
            ConfigurationError: If no endpoint or a non-positive bound is given.

        """
        if not endpoints:
            msg = "At least one teacher endpoint is required"
            raise ConfigurationError(msg)
        if max_in_flight < 1:
            msg = "max_in_flight must be at least 1"
            raise ConfigurationError(msg, details={"max_in_flight": max_in_flight})

        self._endpoints = tuple(endpoints)
        self._cache = cache
        self._semaphore = asyncio.Semaphore(max_in_flight)
        self._session = session
        self._owns_session = session is None
        self._sleep = sleep
        self._breakers: dict[str, CircuitBreaker] = {}
        self._warned_keys: set[str] = set()
        self._logger = ContextLogger(_LOGGER, "teacher_client")
        self.network_calls = 0
        self.cache_hits = 0

    @property
    def endpoints(self) -> tuple[TeacherEndpoint, ...]:
        """Return the configured endpoints."""
        return self._endpoints

    async def __aenter__(self) -> TeacherClient:
        """Open the HTTP session if the client owns it."""
        if self._session is None:
            self._session = aiohttp.ClientSession()
        return self

    async def __aexit__(self, *exc_info: object) -> None:
        """Close an owned HTTP session."""
        await self.close()

    async def close(self) -> None:
        """Close the HTTP session if the client created it."""
        if self._owns_session and self._session is not None:
            await self._session.close()
            self._session = None

    def _breaker(self, endpoint: TeacherEndpoint) -> CircuitBreaker:
        return self._breakers.setdefault(
            endpoint.name,
            CircuitBreaker(
                endpoint.name,
                failure_threshold=DEFAULT_BREAKER_THRESHOLD,
                cooldown=DEFAULT_BREAKER_COOLDOWN,
            ),
        )

    def _headers(self, endpoint: TeacherEndpoint) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(endpoint.api_key_ref, "").strip()
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        elif endpoint.api_key_ref not in self._warned_keys:
            self._warned_keys.add(endpoint.api_key_ref)
            self._logger.warning(
                "API key environment variable is not set, sending unauthenticated requests",
                env=endpoint.api_key_ref,
            )
        return headers

    async def complete(
        self, endpoint: TeacherEndpoint, prompt: str, *, sample_tag: str = ""
    ) -> str:
        """
        Return the teacher's response text for ``prompt``.

        Args:
            endpoint: Endpoint to query.
            prompt: Content of the single user message.
            sample_tag: Distinguishes repeated samples of the same prompt.

        Returns:
            The first choice's message content.

        Raises:
            TransportError: Network failure after all retries.
            ProtocolError: Non-2xx status, carrying status and body excerpt.
            CircuitBreakerOpenError: The endpoint has been failing repeatedly.

        """
        if self._cache is None:
            return await self._complete_uncached(endpoint, prompt)

        key = JudgmentCacheKey.for_request(
            prompt, endpoint.model_name, endpoint.temperature, sample_tag
        )
        response, hit = await self._cache.get_or_compute(
            key, lambda: self._complete_uncached(endpoint, prompt)
        )
        if hit:
            self.cache_hits += 1
            self._logger.debug("Cache hit", key=key.digest[:12])
        return response

    async def _complete_uncached(self, endpoint: TeacherEndpoint, prompt: str) -> str:
        breaker = self._breaker(endpoint)
        breaker.guard()
        try:
            response = await call_with_backoff(
                lambda: self._post(endpoint, prompt),
                max_retries=endpoint.max_retries,
                backoff_factor=endpoint.backoff_seconds,
                sleep=self._sleep,
                name=endpoint.name,
            )
        except TeacherError:
            breaker.record_failure()
            raise
        else:
            breaker.record_success()
            return response

    async def _post(self, endpoint: TeacherEndpoint, prompt: str) -> str:
        if self._session is None:
            msg = "TeacherClient used outside its async context"
            raise ConfigurationError(msg)

        body = {
            "model": endpoint.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": endpoint.temperature,
        }
        timeout = aiohttp.ClientTimeout(total=endpoint.timeout_ms / 1000)
        async with self._semaphore:
            self.network_calls += 1
            try:
                async with self._session.post(
                    endpoint.url,
                    json=body,
                    headers=self._headers(endpoint),
                    timeout=timeout,
                ) as response:
                    status = response.status
                    text = await response.text()
            except (aiohttp.ClientError, TimeoutError) as exc:
                msg = f"Request to {endpoint.name} failed: {exc!r}"
                raise TransportError(
                    msg, details={"endpoint": endpoint.name, "error": repr(exc)}
                ) from exc

        return self._parse_response(endpoint, status, text)

    @staticmethod
    def _parse_response(endpoint: TeacherEndpoint, status: int, text: str) -> str:
        excerpt = text[:BODY_EXCERPT_CHARS]
        details = {"endpoint": endpoint.name}
        if status == HTTP_TOO_MANY_REQUESTS:
            msg = f"Rate limited by {endpoint.name}"
            raise RateLimitError(msg, status=status, body_excerpt=excerpt, details=details)
        if status >= HTTP_SERVER_ERROR:
            msg = f"Server error {status} from {endpoint.name}"
            raise ServerError(msg, status=status, body_excerpt=excerpt, details=details)
        if not 200 <= status < 300:  # noqa: PLR2004
            msg = f"Unexpected status {status} from {endpoint.name}"
            raise ProtocolError(msg, status=status, body_excerpt=excerpt, details=details)

        try:
            return extract_content(json.loads(text))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            msg = f"Malformed chat-completion body from {endpoint.name}"
            raise ProtocolError(
                msg, status=status, body_excerpt=excerpt, details=details
            ) from exc
