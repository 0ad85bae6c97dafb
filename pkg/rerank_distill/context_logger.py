"""
Structured logging for the rerank_distill toolkit.

Messages carry a ``[component=..., operation_id=..., key=value]`` prefix so a
single stage can be followed through interleaved concurrent output.
"""

from __future__ import annotations

import functools
import inspect
import itertools
import logging
import sys
import time
from typing import TYPE_CHECKING, Any, TypeVar

import colorlog

from .const import PACKAGE

if TYPE_CHECKING:
    from collections.abc import Callable

_LOGGER = logging.getLogger(__name__)

F = TypeVar("F", bound="Callable[..., Any]")

_OPERATION_COUNTER = itertools.count(1)

LOG_FORMAT = "%(log_color)s%(asctime)s %(levelname)-8s%(reset)s %(name)s: %(message)s"


class ContextLogger:
    """
    Wrap a ``logging.Logger`` with a component name and bound context.

    Instances are immutable: ``new_operation`` and ``bind`` return copies, so a
    logger can be handed to concurrent tasks without leaking context between them.
    """

    __slots__ = ("_bound", "_component", "_logger", "_operation_id")

    def __init__(
        self,
        logger: logging.Logger,
        component: str,
        bound: dict[str, Any] | None = None,
        operation_id: str | None = None,
    ) -> None:
        """
        Initialize the context logger.

        Args:
            logger: The Python logger to wrap.
            component: Name of the component for context.
            bound: Optional context pairs to attach to every message.
            operation_id: Optional correlation id.

        """
        self._logger = logger
        self._component = component
        self._bound = dict(bound or {})
        self._operation_id = operation_id

    def new_operation(self, operation: str) -> ContextLogger:
        """
        Start a new operation with a fresh correlation id.

        Ids come from a process-local counter, never from a random source, so
        logging cannot disturb seeded generators.
        """
        operation_id = f"{operation}_{next(_OPERATION_COUNTER):06d}"
        return ContextLogger(self._logger, self._component, self._bound, operation_id)

    def bind(self, **kwargs: Any) -> ContextLogger:
        """Return a copy that adds ``kwargs`` to every message."""
        return ContextLogger(
            self._logger,
            self._component,
            {**self._bound, **kwargs},
            self._operation_id,
        )

    def _format_message(self, message: str, **kwargs: Any) -> str:
        head = [f"component={self._component}"]
        if self._operation_id:
            head.append(f"operation_id={self._operation_id}")
        head.extend(f"{key}={value}" for key, value in {**self._bound, **kwargs}.items())
        return f"[{', '.join(head)}] {message}"

    def _emit(
        self, level: int, message: str, context: dict[str, Any], *, exc_info: bool = False
    ) -> None:
        if self._logger.isEnabledFor(level):
            self._logger.log(
                level, self._format_message(message, **context), exc_info=exc_info, stacklevel=3
            )

    def debug(self, message: str, **kwargs: Any) -> None:
        """Log at DEBUG."""
        self._emit(logging.DEBUG, message, kwargs)

    def info(self, message: str, **kwargs: Any) -> None:
        """Log at INFO."""
        self._emit(logging.INFO, message, kwargs)

    def warning(self, message: str, **kwargs: Any) -> None:
        """Log at WARNING."""
        self._emit(logging.WARNING, message, kwargs)

    def error(self, message: str, **kwargs: Any) -> None:
        """Log at ERROR."""
        self._emit(logging.ERROR, message, kwargs)

    def exception(self, message: str, **kwargs: Any) -> None:
        """Log at ERROR with the active traceback."""
        self._emit(logging.ERROR, message, kwargs, exc_info=True)


def log_performance(logger: ContextLogger | None = None) -> Callable[[F], F]:
    """
    Time a function and log the outcome.

    Works on both plain and ``async`` functions. Success is logged at DEBUG,
    failure at WARNING with the error text; the exception is re-raised.

    Args:
        logger: Logger to report through. Defaults to a ``performance`` component.

    """
    perf_logger = logger or ContextLogger(_LOGGER, "performance")

    def report(name: str, started: float, error: BaseException | None) -> None:
        elapsed_ms = round((time.perf_counter() - started) * 1000, 2)
        if error is None:
            perf_logger.debug(
                "Function completed", function=name, duration_ms=elapsed_ms, success=True
            )
        else:
            perf_logger.warning(
                "Function failed",
                function=name,
                duration_ms=elapsed_ms,
                success=False,
                error=str(error),
            )

    def decorator(func: F) -> F:
        if inspect.iscoroutinefunction(func):

            @functools.wraps(func)
            async def async_wrapper(*args: Any, **kwargs: Any) -> Any:
                started = time.perf_counter()
                try:
                    result = await func(*args, **kwargs)
                except Exception as exc:
                    report(func.__name__, started, exc)
                    raise
                report(func.__name__, started, None)
                return result

            return async_wrapper  # type: ignore[return-value]

        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            started = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                report(func.__name__, started, exc)
                raise
            report(func.__name__, started, None)
            return result

        return wrapper  # type: ignore[return-value]

    return decorator


def setup_logging(*, verbose: bool = False) -> None:
    """
    Install a colored stderr handler on the package logger.

    Calling it again replaces the previous handler instead of stacking a
    second one.

    Args:
        verbose: Log at DEBUG instead of INFO.

    """
    package_logger = logging.getLogger(PACKAGE)
    package_logger.setLevel(logging.DEBUG if verbose else logging.INFO)

    for handler in list(package_logger.handlers):
        if getattr(handler, "_rerank_distill_handler", False):
            package_logger.removeHandler(handler)

    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(colorlog.ColoredFormatter(LOG_FORMAT, datefmt="%H:%M:%S"))
    handler._rerank_distill_handler = True  # type: ignore[attr-defined]  # noqa: SLF001
    package_logger.addHandler(handler)
