"""
Bradley-Terry (Elo) fitting and score calibration.

Scores are fitted per query by maximizing the L2-regularized Bradley-Terry
log-likelihood with minorize-maximize updates, gauge-fixed to mean zero,
mapped onto [0, 1] and bucketed into the five relevance bands.
"""

from __future__ import annotations

import bisect
import logging
from collections import defaultdict
from dataclasses import dataclass
from types import MappingProxyType
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import stats
from scipy.special import expit, log_expit

from .const import (
    BAND_EDGES,
    BAND_LABELS,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_PRIOR_STRENGTH,
    DEFAULT_TAU,
    DEFAULT_TOLERANCE,
    NORMALIZATION_LOGISTIC,
    NORMALIZATION_MINMAX,
)
from .context_logger import ContextLogger
from .exceptions import ConfigurationError, FitError, ValidationError
from .models import ranking_key
from .records import round_float
from .validation import validate_finite, validate_range

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

    from .models import PairwisePreference

_LOGGER = logging.getLogger(__name__)

_MIN_STEP = 1e-12


@dataclass(frozen=True, slots=True)
class BTFitConfig:
    """Optimizer and normalization settings."""

    prior_strength: float = DEFAULT_PRIOR_STRENGTH
    tolerance: float = DEFAULT_TOLERANCE
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    normalization: str = NORMALIZATION_LOGISTIC
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.prior_strength < 0:
            msg = "prior_strength cannot be negative"
            raise ConfigurationError(msg, details={"prior_strength": self.prior_strength})
        if self.tolerance <= 0:
            msg = "tolerance must be positive"
            raise ConfigurationError(msg, details={"tolerance": self.tolerance})
        if self.max_iterations < 1:
            msg = "max_iterations must be at least 1"
            raise ConfigurationError(msg, details={"max_iterations": self.max_iterations})
        if self.normalization not in (NORMALIZATION_LOGISTIC, NORMALIZATION_MINMAX):
            msg = f"Unknown normalization '{self.normalization}'"
            raise ConfigurationError(msg, details={"normalization": self.normalization})
        if self.tau <= 0:
            msg = "tau must be positive"
            raise ConfigurationError(msg, details={"tau": self.tau})


@dataclass(frozen=True, slots=True)
class EloScores:
    """Fitted strengths of one query's documents, mean zero."""

    query_id: str
    scores: Mapping[str, float]
    iterations_used: int
    converged: bool
    objective: float

    def ranked(self) -> list[tuple[str, float]]:
        """Return (doc_id, elo) pairs, strongest first, ties by doc id."""
        return sorted(self.scores.items(), key=ranking_key)


@dataclass(frozen=True, slots=True)
class CalibratedScore:
    """A [0, 1] relevance score and its band."""

    doc_id: str
    score: float
    band: int

    def __post_init__(self) -> None:
        """Check that the band matches the score."""
        if self.band != assign_band(self.score):
            msg = "Band does not match score"
            raise ValidationError(msg, details={"score": self.score, "band": self.band})

    @property
    def label(self) -> str:
        """Return the band's name."""
        return BAND_LABELS[self.band]


def assign_band(score: float) -> int:
    """
    Return the band (1-5) of a score in [0, 1].

    Bands are half-open on the right, ``[0, 0.2), [0.2, 0.4), ...``, and the
    last band is closed at 1.0.

    Raises:
        ValidationError: If the score lies outside [0, 1].

    """
    value = validate_range(score, "score", 0.0, 1.0)
    return bisect.bisect_right(BAND_EDGES, value) + 1


def pairwise_probability(elo_i: float, elo_j: float) -> float:
    """Return the probability that document i is preferred over document j."""
    diff = validate_finite(elo_i, "elo_i") - validate_finite(elo_j, "elo_j")
    return float(expit(diff))


class _Problem:
    """Vectorized objective and gradient of one fit."""

    def __init__(
        self,
        winners: np.ndarray,
        losers: np.ndarray,
        weights: np.ndarray,
        n: int,
        prior: float,
    ) -> None:
        self.winners = winners
        self.losers = losers
        self.weights = weights
        self.n = n
        self.prior = prior
        exposure = np.bincount(winners, weights, n) + np.bincount(losers, weights, n)
        curvature = exposure / 2.0 + prior
        self.step_scale = np.where(curvature > 0, 1.0 / np.where(curvature > 0, curvature, 1.0), 0.0)

    def objective(self, theta: np.ndarray) -> float:
        diff = theta[self.winners] - theta[self.losers]
        return float(self.weights @ log_expit(diff) - 0.5 * self.prior * (theta @ theta))

    def gradient(self, theta: np.ndarray) -> np.ndarray:
        diff = theta[self.winners] - theta[self.losers]
        residual = self.weights * expit(-diff)
        return (
            np.bincount(self.winners, residual, self.n)
            - np.bincount(self.losers, residual, self.n)
            - self.prior * theta
        )


def _backtracking_step(
    problem: _Problem, theta: np.ndarray, gradient: np.ndarray, current: float
) -> np.ndarray:
    step = 1.0
    while step > _MIN_STEP:
        candidate = theta + step * gradient
        candidate -= candidate.mean()
        if problem.objective(candidate) >= current:
            return candidate
        step /= 2.0
    return theta


def fit_bradley_terry(
    prefs: Sequence[PairwisePreference],
    config: BTFitConfig | None = None,
    *,
    doc_ids: Iterable[str] = (),
    initial: Mapping[str, float] | None = None,
) -> EloScores:
    """
    Fit Bradley-Terry strengths for one query.

    Maximizes ``sum w * ln sigma(elo_w - elo_l) - (lambda / 2) * sum elo^2``.
    Each iteration takes the minorize-maximize step ``elo += g / (D / 2 +
    lambda)``, where ``D`` is a document's total comparison weight, then
    re-centers to mean zero. Should a step fail to improve the objective, a
    backtracking gradient step is taken instead.

    Args:
        prefs: Aggregated preferences of a single query.
        config: Optimizer settings.
        doc_ids: Extra documents to score even without comparisons.
        initial: Starting strengths; missing documents start at 0.

    Returns:
        Mean-zero scores, with ``converged`` set when the largest per-iteration
        change fell below the tolerance.

    Raises:
        FitError: For empty input, several queries, or non-finite weights.

    """
    config = config or BTFitConfig()
    if not prefs:
        msg = "Cannot fit Bradley-Terry scores without preferences"
        raise FitError(msg)
    query_ids = {pref.query_id for pref in prefs}
    if len(query_ids) != 1:
        msg = "Preferences span several queries"
        raise FitError(msg, details={"query_ids": sorted(query_ids)})
    query_id = next(iter(query_ids))

    weights = np.array([pref.weight for pref in prefs], dtype=float)
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        msg = "Preference weights must be finite and positive"
        raise FitError(msg, details={"query_id": query_id})

    names = sorted({pref.winner for pref in prefs} | {pref.loser for pref in prefs} | set(doc_ids))
    index = {name: position for position, name in enumerate(names)}
    problem = _Problem(
        winners=np.array([index[pref.winner] for pref in prefs], dtype=np.intp),
        losers=np.array([index[pref.loser] for pref in prefs], dtype=np.intp),
        weights=weights,
        n=len(names),
        prior=config.prior_strength,
    )

    theta = np.zeros(len(names))
    if initial:
        theta = np.array([float(initial.get(name, 0.0)) for name in names])
        if not np.all(np.isfinite(theta)):
            msg = "Initial scores must be finite"
            raise FitError(msg, details={"query_id": query_id})
    theta -= theta.mean()

    logger = ContextLogger(_LOGGER, "elo_fit").new_operation("fit").bind(query_id=query_id)
    current = problem.objective(theta)
    converged = False
    iterations = 0
    fallback_used = False
    for iterations in range(1, config.max_iterations + 1):  # noqa: B007
        gradient = problem.gradient(theta)
        candidate = theta + gradient * problem.step_scale
        candidate -= candidate.mean()
        value = problem.objective(candidate)
        if value < current:
            if not fallback_used:
                logger.warning("MM step stalled, switching to gradient ascent", iteration=iterations)
                fallback_used = True
            candidate = _backtracking_step(problem, theta, gradient, current)
            value = problem.objective(candidate)

        delta = float(np.max(np.abs(candidate - theta)))
        theta, current = candidate, value
        if delta < config.tolerance:
            converged = True
            break

    if not converged:
        logger.warning("Fit did not converge", iterations=iterations)
    logger.debug("Fit finished", iterations=iterations, objective=current)
    return EloScores(
        query_id=query_id,
        scores=MappingProxyType({name: float(theta[i]) for name, i in index.items()}),
        iterations_used=iterations,
        converged=converged,
        objective=current,
    )


def fit_queries(
    prefs: Iterable[PairwisePreference],
    config: BTFitConfig | None = None,
    *,
    pools: Mapping[str, Sequence[str]] | None = None,
) -> dict[str, EloScores]:
    """
    Fit every query independently, in query-id order.

    Args:
        prefs: Preferences of any number of queries.
        config: Optimizer settings.
        pools: Optional doc ids per query to score even without comparisons.

    """
    grouped: dict[str, list[PairwisePreference]] = defaultdict(list)
    for pref in prefs:
        grouped[pref.query_id].append(pref)
    pools = pools or {}
    return {
        query_id: fit_bradley_terry(grouped[query_id], config, doc_ids=pools.get(query_id, ()))
        for query_id in sorted(grouped)
    }


def normalize_scores(
    elos: EloScores, config: BTFitConfig | None = None
) -> list[CalibratedScore]:
    """
    Map strengths onto [0, 1] and assign bands.

    ``per_query_logistic`` uses ``sigma(elo / tau)``; ``per_query_minmax``
    maps [min, max] affinely onto [0, 1] and sends a constant set to 0.5.

    Returns:
        Calibrated scores, strongest first, ties by doc id.

    """
    config = config or BTFitConfig()
    ranked = elos.ranked()
    values = np.array([elo for _, elo in ranked], dtype=float)
    if not np.all(np.isfinite(values)):
        msg = "Elo scores must be finite"
        raise ValidationError(msg, details={"query_id": elos.query_id})

    if config.normalization == NORMALIZATION_LOGISTIC:
        scaled = expit(values / config.tau)
    else:
        low, high = (float(values.min()), float(values.max())) if values.size else (0.0, 0.0)
        scaled = np.full_like(values, 0.5) if high == low else (values - low) / (high - low)

    return [
        CalibratedScore(doc_id=doc_id, score=float(score), band=assign_band(float(score)))
        for (doc_id, _), score in zip(ranked, np.clip(scaled, 0.0, 1.0), strict=True)
    ]


def calibrated_records(
    elos: EloScores, calibrated: Sequence[CalibratedScore]
) -> list[dict[str, Any]]:
    """Encode one query's scores for the calibrated-scores artifact."""
    return [
        {
            "query_id": elos.query_id,
            "doc_id": item.doc_id,
            "elo": round_float(elos.scores[item.doc_id]),
            "score": round_float(item.score),
            "band": item.band,
        }
        for item in calibrated
    ]


def kendall_tau(first: Mapping[str, float], second: Mapping[str, float]) -> float:
    """
    Kendall rank correlation of two score maps over their shared documents.

    Raises:
        ValidationError: If fewer than two documents are shared.

    """
    shared = sorted(set(first) & set(second))
    if len(shared) < 2:  # noqa: PLR2004
        msg = "Kendall tau needs at least two shared documents"
        raise ValidationError(msg, details={"shared": len(shared)})
    result = stats.kendalltau([first[k] for k in shared], [second[k] for k in shared])
    return float(result.statistic)
