"""
Hard-negative filtering by similarity gap.

Each candidate negative is compared against the query's positive by
first-stage similarity. The gap ``pos_sim - neg_sim`` sorts it into one of
three buckets: below 0 it is a suspected annotation error and goes to
cross-verification, where a suspect that passes is kept as a hard negative;
in ``[0, 0.2)`` it is kept as a hard negative; from 0.2 upwards it is an easy
negative of which only a seeded 20% sample is kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import TYPE_CHECKING, Any

from .const import DEFAULT_EASY_RATE, DEFAULT_HARD_GAP, DEFAULT_MARGIN, DEFAULT_SEED
from .context_logger import ContextLogger
from .exceptions import (
    ConfigurationError,
    MissingVerifierScoreError,
    RecordParseError,
    ValidationError,
)
from .records import RecordKind, read_jsonl, round_float
from .seeding import derived_rng
from .validation import validate_finite, validate_identifier, validate_range

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence
    from pathlib import Path

_LOGGER = logging.getLogger(__name__)

GAP_DIGITS = 12
GLOBAL_SCOPE = "__global__"


class Bucket(StrEnum):
    """Gap classes of a candidate negative."""

    SUSPECT_ERROR = "suspect_error"
    HARD_NEGATIVE = "hard_negative"
    EASY_NEGATIVE = "easy_negative"


class Verdict(StrEnum):
    """Outcome of cross-verifying a suspect negative."""

    KEEP = "keep"
    DROP = "drop"
    RELABEL = "relabel"


class Reason(StrEnum):
    """Why a decision was made."""

    HARD_GAP = "hard_gap"
    CROSS_VERIFIED = "cross_verified"
    AMBIGUOUS = "ambiguous"
    RELABELED = "relabeled"
    UNVERIFIED = "unverified"
    EASY_SAMPLED = "easy_sampled"
    EASY_SUBSAMPLED_OUT = "easy_subsampled_out"


@dataclass(frozen=True, slots=True)
class NegativeCandidate:
    """A candidate negative with its first-stage similarity."""

    query_id: str
    doc_id: str
    sim: float
    verifier_score: float | None = None

    def __post_init__(self) -> None:
        """Validate the candidate."""
        validate_identifier(self.query_id, "negative.query_id")
        validate_identifier(self.doc_id, "negative.doc_id")
        object.__setattr__(self, "sim", validate_finite(self.sim, "negative.sim"))
        if self.verifier_score is not None:
            object.__setattr__(
                self,
                "verifier_score",
                validate_finite(self.verifier_score, "negative.verifier_score"),
            )


@dataclass(frozen=True, slots=True)
class FilterDecision:
    """Bucket and keep/drop outcome of one candidate."""

    query_id: str
    doc_id: str
    bucket: Bucket
    kept: bool
    reason: Reason
    gap: float

    def __post_init__(self) -> None:
        """A suspect is never kept; one that passes cross-verification is a hard negative."""
        if self.kept and self.bucket is Bucket.SUSPECT_ERROR:
            msg = "A suspect negative cannot be kept"
            raise ValidationError(msg, details={"doc_id": self.doc_id, "reason": str(self.reason)})

    def to_record(self) -> dict[str, Any]:
        """Encode for the decisions artifact."""
        return {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "bucket": str(self.bucket),
            "kept": self.kept,
            "reason": str(self.reason),
            "gap": round_float(self.gap),
        }


@dataclass(frozen=True, slots=True)
class RelabelEntry:
    """A "negative" the verifier scored above the positive."""

    query_id: str
    doc_id: str
    verifier_score: float
    positive_verifier_score: float

    def to_record(self) -> dict[str, Any]:
        """Encode for the relabel queue."""
        return {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "verifier_score": round_float(self.verifier_score),
            "positive_verifier_score": round_float(self.positive_verifier_score),
        }


@dataclass(frozen=True, slots=True)
class FilterConfig:
    """Thresholds and sampling settings."""

    hard_gap: float = DEFAULT_HARD_GAP
    easy_rate: float = DEFAULT_EASY_RATE
    margin: float = DEFAULT_MARGIN
    global_quota: bool = False
    require_verifier: bool = False
    seed: int = DEFAULT_SEED

    def __post_init__(self) -> None:
        """Validate the settings."""
        if not math.isfinite(self.hard_gap) or self.hard_gap <= 0:
            msg = "hard_gap must be positive"
            raise ConfigurationError(msg, details={"hard_gap": self.hard_gap})
        if not 0.0 <= self.easy_rate <= 1.0:
            msg = "easy_rate must lie in [0, 1]"
            raise ConfigurationError(msg, details={"easy_rate": self.easy_rate})
        if not math.isfinite(self.margin) or self.margin < 0:
            msg = "margin cannot be negative"
            raise ConfigurationError(msg, details={"margin": self.margin})


@dataclass(frozen=True, slots=True)
class FilterGroup:
    """One query's positive and its candidate negatives."""

    query_id: str
    positive_sim: float
    candidates: tuple[NegativeCandidate, ...]
    positive_verifier_score: float | None = None


@dataclass(slots=True)
class FilterResult:
    """Decisions in input order plus the relabel queue."""

    decisions: list[FilterDecision] = field(default_factory=list)
    relabel: list[RelabelEntry] = field(default_factory=list)

    def kept(self, bucket: Bucket | None = None) -> list[FilterDecision]:
        """Return kept decisions, optionally of one bucket."""
        return [
            decision
            for decision in self.decisions
            if decision.kept and (bucket is None or decision.bucket is bucket)
        ]

    def counts(self) -> dict[str, int]:
        """Return the number of decisions per bucket."""
        counts = {str(bucket): 0 for bucket in Bucket}
        for decision in self.decisions:
            counts[str(decision.bucket)] += 1
        return counts


def compute_gap(pos_sim: float, neg_sim: float) -> float:
    """
    Return ``pos_sim - neg_sim``.

    The difference is rounded to 12 decimals so that inputs such as
    (0.7, 0.5) land on the 0.2 boundary instead of just below it.
    """
    positive = validate_finite(pos_sim, "pos_sim")
    negative = validate_finite(neg_sim, "neg_sim")
    return round(positive - negative, GAP_DIGITS) + 0.0


def classify_gap(gap: float, hard_gap: float = DEFAULT_HARD_GAP) -> Bucket:
    """
    Return the bucket of a gap.

    ``gap < 0`` is a suspect, ``0 <= gap < hard_gap`` a hard negative and
    ``gap >= hard_gap`` an easy negative.
    """
    value = validate_finite(gap, "gap")
    if value < 0:
        return Bucket.SUSPECT_ERROR
    if value < hard_gap:
        return Bucket.HARD_NEGATIVE
    return Bucket.EASY_NEGATIVE


def cross_verify(
    candidate: NegativeCandidate,
    positive_verifier_score: float,
    margin: float = DEFAULT_MARGIN,
) -> Verdict:
    """
    Decide what to do with a suspect negative using verifier scores.

    Args:
        candidate: The suspect, carrying its verifier score.
        positive_verifier_score: Verifier score of the query's positive.
        margin: Ambiguity margin on the verifier's scale.

    Returns:
        ``RELABEL`` when the negative outscores the positive by more than the
        margin, ``DROP`` when the two are within the margin, else ``KEEP``.

    Raises:
        MissingVerifierScoreError: If the candidate has no verifier score.

    """
    if candidate.verifier_score is None:
        msg = "Suspect negative has no verifier_score; run the verifier first"
        raise MissingVerifierScoreError(
            msg, details={"query_id": candidate.query_id, "doc_id": candidate.doc_id}
        )
    positive = validate_finite(positive_verifier_score, "positive_verifier_score")
    if candidate.verifier_score > positive + margin:
        return Verdict.RELABEL
    if abs(candidate.verifier_score - positive) <= margin:
        return Verdict.DROP
    return Verdict.KEEP


def easy_quota(n: int, rate: float) -> int:
    """Return ``ceil(rate * n)``, ignoring float noise in the product."""
    return math.ceil(round(rate * n, 9))


def subsample_easy(
    easy: Sequence[FilterDecision],
    rate: float = DEFAULT_EASY_RATE,
    seed: int = DEFAULT_SEED,
    *,
    scope: str = GLOBAL_SCOPE,
) -> list[FilterDecision]:
    """
    Keep a seeded ``ceil(rate * n)`` sample of easy negatives.

    The sample is drawn from a generator derived from ``(seed, scope)``, so
    the outcome does not depend on which other queries are processed or in
    what order.

    Returns:
        The selected decisions, in input order.

    """
    rate = validate_range(rate, "rate", 0.0, 1.0)
    count = easy_quota(len(easy), rate)
    if count == 0:
        return []
    order = sorted(range(len(easy)), key=lambda i: (easy[i].query_id, easy[i].doc_id))
    derived_rng(seed, scope).shuffle(order)
    chosen = set(order[:count])
    return [decision for index, decision in enumerate(easy) if index in chosen]


def _classify(
    group: FilterGroup, config: FilterConfig, result: FilterResult
) -> list[FilterDecision]:
    easy: list[FilterDecision] = []
    for candidate in group.candidates:
        gap = compute_gap(group.positive_sim, candidate.sim)
        bucket = classify_gap(gap, config.hard_gap)
        if bucket is Bucket.HARD_NEGATIVE:
            decision = FilterDecision(group.query_id, candidate.doc_id, bucket, True, Reason.HARD_GAP, gap)
        elif bucket is Bucket.EASY_NEGATIVE:
            decision = FilterDecision(
                group.query_id, candidate.doc_id, bucket, False, Reason.EASY_SUBSAMPLED_OUT, gap
            )
            easy.append(decision)
        else:
            decision = _verify(group, candidate, gap, config, result)
        result.decisions.append(decision)
    return easy


def _verify(
    group: FilterGroup,
    candidate: NegativeCandidate,
    gap: float,
    config: FilterConfig,
    result: FilterResult,
) -> FilterDecision:
    if candidate.verifier_score is None or group.positive_verifier_score is None:
        if config.require_verifier:
            msg = "Suspect negative cannot be cross-verified without verifier scores"
            raise MissingVerifierScoreError(
                msg, details={"query_id": group.query_id, "doc_id": candidate.doc_id}
            )
        return FilterDecision(
            group.query_id, candidate.doc_id, Bucket.SUSPECT_ERROR, False, Reason.UNVERIFIED, gap
        )

    verdict = cross_verify(candidate, group.positive_verifier_score, config.margin)
    if verdict is Verdict.RELABEL:
        result.relabel.append(
            RelabelEntry(
                group.query_id,
                candidate.doc_id,
                candidate.verifier_score,
                group.positive_verifier_score,
            )
        )
        reason = Reason.RELABELED
    elif verdict is Verdict.DROP:
        reason = Reason.AMBIGUOUS
    else:
        return FilterDecision(
            group.query_id, candidate.doc_id, Bucket.HARD_NEGATIVE, True, Reason.CROSS_VERIFIED, gap
        )
    return FilterDecision(group.query_id, candidate.doc_id, Bucket.SUSPECT_ERROR, False, reason, gap)


def _mark_sampled(result: FilterResult, sampled: Iterable[FilterDecision]) -> None:
    keys = {(decision.query_id, decision.doc_id) for decision in sampled}
    result.decisions = [
        replace(decision, kept=True, reason=Reason.EASY_SAMPLED)
        if (decision.query_id, decision.doc_id) in keys
        else decision
        for decision in result.decisions
    ]


def filter_query(group: FilterGroup, config: FilterConfig | None = None) -> FilterResult:
    """
    Filter one query's candidates with a per-query easy quota.

    Every candidate yields exactly one decision, in input order.

    Raises:
        MissingVerifierScoreError: For an unverifiable suspect when the
            config requires verifier scores.

    """
    config = config or FilterConfig()
    result = FilterResult()
    easy = _classify(group, config, result)
    _mark_sampled(result, subsample_easy(easy, config.easy_rate, config.seed, scope=group.query_id))
    return result


def filter_all(
    groups: Mapping[str, FilterGroup], config: FilterConfig | None = None
) -> FilterResult:
    """
    Filter every query, in query-id order.

    With ``global_quota`` the easy quota is applied once over the easy
    negatives of all queries instead of per query.
    """
    config = config or FilterConfig()
    logger = ContextLogger(_LOGGER, "negative_filter").new_operation("filter_all")
    result = FilterResult()
    if config.global_quota:
        easy: list[FilterDecision] = []
        for query_id in sorted(groups):
            easy.extend(_classify(groups[query_id], config, result))
        _mark_sampled(result, subsample_easy(easy, config.easy_rate, config.seed))
    else:
        for query_id in sorted(groups):
            query_result = filter_query(groups[query_id], config)
            result.decisions.extend(query_result.decisions)
            result.relabel.extend(query_result.relabel)

    counts = result.counts()
    logger.info(
        "Filtered negatives",
        queries=len(groups),
        kept=len(result.kept()),
        relabel=len(result.relabel),
        **counts,
    )
    unverified = sum(1 for decision in result.decisions if decision.reason is Reason.UNVERIFIED)
    if unverified:
        logger.warning("Dropped suspects without verifier scores", count=unverified)
    return result


def _optional_float(obj: dict[str, Any], key: str) -> float | None:
    value = obj.get(key)
    return None if value is None else validate_finite(value, key)


def read_filter_input(path: str | Path) -> dict[str, FilterGroup]:
    """
    Read filter input rows and group them per query.

    Rows are ``{"query_id", "doc_id", "sim", "verifier_score"?, "positive"?}``.
    Rows flagged ``positive`` supply the positive similarity and verifier
    score (the maximum when there are several); all other rows are candidates.

    Raises:
        RecordParseError: For an invalid row, or a query without a positive.

    """
    positives: dict[str, list[tuple[float, float | None]]] = {}
    candidates: dict[str, list[NegativeCandidate]] = {}
    first_line: dict[str, int] = {}
    for record in read_jsonl(path, RecordKind.RAW):
        obj = record.value
        try:
            query_id = validate_identifier(obj.get("query_id"), "query_id")
            sim = validate_finite(obj.get("sim"), "sim")
            verifier = _optional_float(obj, "verifier_score")
            first_line.setdefault(query_id, record.line)
            if obj.get("positive"):
                positives.setdefault(query_id, []).append((sim, verifier))
            else:
                candidates.setdefault(query_id, []).append(
                    NegativeCandidate(query_id, obj.get("doc_id"), sim, verifier)
                )
        except ValidationError as exc:
            msg = f"Invalid filter record on line {record.line}: {exc}"
            raise RecordParseError(msg, line=record.line, offset=0, path=str(path)) from exc

    groups: dict[str, FilterGroup] = {}
    for query_id, line in first_line.items():
        if query_id not in positives:
            msg = f"Query {query_id} has no positive row"
            raise RecordParseError(
                msg, line=line, offset=0, path=str(path), details={"query_id": query_id}
            )
        scores = [score for _, score in positives[query_id] if score is not None]
        groups[query_id] = FilterGroup(
            query_id=query_id,
            positive_sim=max(sim for sim, _ in positives[query_id]),
            candidates=tuple(candidates.get(query_id, ())),
            positive_verifier_score=max(scores) if scores else None,
        )
    return groups
