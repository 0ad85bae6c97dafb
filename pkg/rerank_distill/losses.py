"""
Reference losses for reranker training.

``bce_soft`` is the pointwise loss on soft labels, ``infonce_listwise`` the
listwise contrastive loss. Both return the loss and its analytic gradient and
are written in log-sigmoid / log-sum-exp form so they stay finite for large
scores. :func:`check_gradients` compares the analytic gradients with central
finite differences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import expit, log_expit, logsumexp, softmax

from .exceptions import ValidationError
from .validation import validate_finite, validate_range

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

_LOGGER = logging.getLogger(__name__)

FD_STEP = 1e-5
GRADIENT_TOLERANCE = 1e-6
CHECK_TEMPERATURES = (0.05, 1.0, 10.0)


@dataclass(frozen=True, slots=True)
class ScoredList:
    """Scores of one candidate list with the index of its positive."""

    scores: tuple[float, ...]
    positive_index: int
    temperature: float = 1.0

    def __post_init__(self) -> None:
        """Validate scores, index and temperature."""
        scores = tuple(validate_finite(score, "score") for score in self.scores)
        object.__setattr__(self, "scores", scores)
        if not 0 <= self.positive_index < len(scores):
            msg = "positive_index out of range"
            raise ValidationError(
                msg, details={"positive_index": self.positive_index, "size": len(scores)}
            )
        temperature = validate_finite(self.temperature, "temperature")
        if temperature <= 0:
            msg = "temperature must be positive"
            raise ValidationError(msg, details={"temperature": temperature})
        object.__setattr__(self, "temperature", temperature)

    def with_scores(self, scores: Sequence[float]) -> ScoredList:
        """Return a copy with different scores."""
        return ScoredList(tuple(scores), self.positive_index, self.temperature)


def bce_soft(logit: float, target: float) -> tuple[float, float]:
    """
    Binary cross-entropy of ``sigmoid(logit)`` against a soft target.

    Args:
        logit: Raw score.
        target: Soft label in [0, 1].

    Returns:
        ``(loss, dloss/dlogit)`` where the gradient is ``sigmoid(logit) - target``.

    """
    x = validate_finite(logit, "logit")
    t = validate_range(target, "target", 0.0, 1.0)
    loss = -(t * log_expit(x) + (1.0 - t) * log_expit(-x))
    return float(loss), float(expit(x) - t)


def infonce_listwise(scored: ScoredList) -> tuple[float, np.ndarray]:
    """
    Listwise InfoNCE: ``-ln softmax(s / tau)[positive]``.

    Returns:
        The loss and its gradient ``(softmax(s / tau) - onehot) / tau``.

    Raises:
        ValidationError: For a list with fewer than two scores.

    """
    if len(scored.scores) < 2:  # noqa: PLR2004
        msg = "InfoNCE needs at least two scores"
        raise ValidationError(msg, details={"size": len(scored.scores)})
    z = np.asarray(scored.scores, dtype=float) / scored.temperature
    loss = float(logsumexp(z - z[scored.positive_index]))
    gradient = softmax(z)
    gradient[scored.positive_index] -= 1.0
    return max(loss, 0.0), gradient / scored.temperature


def relative_error(analytic: float, numeric: float) -> float:
    """
    Return ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.

    Relative for gradients of magnitude 1 or more, absolute below that. A
    central difference with ``h = 1e-5`` has an absolute rounding error near
    1e-11 regardless of the derivative, which a pure ratio would blow up for
    gradients close to 0.
    """
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def central_difference(func: Callable[[float], float], x: float, h: float = FD_STEP) -> float:
    """Central finite-difference derivative of a scalar function."""
    return (func(x + h) - func(x - h)) / (2.0 * h)


@dataclass(slots=True)
class GradientReport:
    """Outcome of a finite-difference check."""

    cases: int = 0
    max_relative_error: dict[str, float] = field(default_factory=dict)

    @property
    def worst(self) -> float:
        """Return the largest error over all losses."""
        return max(self.max_relative_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        """Return whether every error is within tolerance."""
        return self.worst <= GRADIENT_TOLERANCE

    def record(self, name: str, error: float) -> None:
        """Fold one comparison into the report."""
        self.cases += 1
        self.max_relative_error[name] = max(self.max_relative_error.get(name, 0.0), error)


def check_bce(rng: np.random.Generator, cases: int, report: GradientReport) -> None:
    """Check ``bce_soft`` gradients on random (logit, target) pairs."""
    for _ in range(cases):
        logit = float(rng.uniform(-10.0, 10.0))
        target = float(rng.uniform(0.0, 1.0))
        _, analytic = bce_soft(logit, target)
        numeric = central_difference(lambda x, t=target: bce_soft(x, t)[0], logit)
        report.record("bce_soft", relative_error(analytic, numeric))


def check_infonce(
    rng: np.random.Generator,
    cases: int,
    report: GradientReport,
    temperatures: Sequence[float] = CHECK_TEMPERATURES,
) -> None:
    """Check ``infonce_listwise`` gradients on random lists, every component."""
    for case in range(cases):
        size = int(rng.integers(2, 9))
        scored = ScoredList(
            tuple(rng.normal(0.0, 1.0, size).tolist()),
            int(rng.integers(0, size)),
            temperatures[case % len(temperatures)],
        )
        _, analytic = infonce_listwise(scored)
        for index in range(size):

            def loss_at(value: float, i: int = index, base: ScoredList = scored) -> float:
                scores = list(base.scores)
                scores[i] = value
                return infonce_listwise(base.with_scores(scores))[0]

            numeric = central_difference(loss_at, scored.scores[index])
            report.record("infonce_listwise", relative_error(float(analytic[index]), numeric))


def check_gradients(seed: int = 0, cases: int = 1000) -> GradientReport:
    """Run the finite-difference suite for both losses."""
    rng = np.random.default_rng(seed)
    report = GradientReport()
    check_bce(rng, cases, report)
    check_infonce(rng, cases, report)
    _LOGGER.info(
        "Gradient check over %d comparisons, max relative error %.3e",
        report.cases,
        report.worst,
    )
    return report
