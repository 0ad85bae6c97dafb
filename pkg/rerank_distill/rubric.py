"""Weighted quality score for auditing constructed training pairs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from .const import RUBRIC_FIELDS, RUBRIC_WEIGHTS
from .exceptions import RecordParseError, ValidationError
from .records import RecordKind, read_jsonl, round_float
from .validation import validate_identifier, validate_range

if TYPE_CHECKING:
    from collections.abc import Iterable
    from pathlib import Path

_LOGGER = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True, slots=True)
class RubricScores:
    """
    Sub-scores of one audited pair.

    Attributes:
        semantic_relevance: Does the document address the query's meaning.
        attribute_precision: Are names, numbers and attributes exactly right.
        information_completeness: Does it cover everything the query asks.
        answer_density: Share of the text that carries the answer.
        weights: Weights in the field order above.

    """

    semantic_relevance: float
    attribute_precision: float
    information_completeness: float
    answer_density: float
    weights: tuple[float, float, float, float] = RUBRIC_WEIGHTS

    def __post_init__(self) -> None:
        """Validate sub-scores and weights."""
        for name in (
            "semantic_relevance",
            "attribute_precision",
            "information_completeness",
            "answer_density",
        ):
            object.__setattr__(self, name, validate_range(getattr(self, name), name, 0.0, 1.0))
        weights = tuple(float(weight) for weight in self.weights)
        if len(weights) != len(RUBRIC_FIELDS) or any(
            not math.isfinite(weight) or weight < 0 for weight in weights
        ):
            msg = "Rubric weights must be four nonnegative numbers"
            raise ValidationError(msg, details={"weights": list(self.weights)})
        if abs(math.fsum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
            msg = "Rubric weights must sum to 1"
            raise ValidationError(msg, details={"weights": list(weights)})
        object.__setattr__(self, "weights", weights)

    @property
    def values(self) -> tuple[float, float, float, float]:
        """Return sub-scores in weight order."""
        return (
            self.semantic_relevance,
            self.attribute_precision,
            self.information_completeness,
            self.answer_density,
        )


def aggregate_rubric(scores: RubricScores) -> float:
    """Return the weighted total of the sub-scores, in [0, 1]."""
    total = math.fsum(w * v for w, v in zip(scores.weights, scores.values, strict=True))
    return min(1.0, max(0.0, total))


@dataclass(frozen=True, slots=True)
class AuditRecord:
    """Sub-scores of one (query, document) pair."""

    query_id: str
    doc_id: str
    scores: RubricScores

    @property
    def total(self) -> float:
        """Return the aggregated score."""
        return aggregate_rubric(self.scores)

    def to_record(self) -> dict[str, Any]:
        """Encode with the computed ``total``."""
        record: dict[str, Any] = {"query_id": self.query_id, "doc_id": self.doc_id}
        for key, value in zip(RUBRIC_FIELDS, self.scores.values, strict=True):
            record[key] = round_float(value)
        record["total"] = round_float(self.total)
        return record


def decode_audit(obj: dict[str, Any]) -> AuditRecord:
    """Decode an audit record; any stored ``total`` is recomputed."""
    missing = [key for key in RUBRIC_FIELDS if key not in obj]
    if missing:
        msg = "Audit record is missing sub-scores"
        raise ValidationError(msg, details={"missing": missing})
    return AuditRecord(
        query_id=validate_identifier(obj.get("query_id"), "query_id"),
        doc_id=validate_identifier(obj.get("doc_id"), "doc_id"),
        scores=RubricScores(*(obj[key] for key in RUBRIC_FIELDS)),
    )


def read_audit(path: str | Path) -> list[AuditRecord]:
    """
    Read audit records.

    Raises:
        RecordParseError: For a record with missing or out-of-range sub-scores.

    """
    records = []
    for record in read_jsonl(path, RecordKind.RAW):
        try:
            records.append(decode_audit(record.value))
        except ValidationError as exc:
            msg = f"Invalid audit record on line {record.line}: {exc}"
            raise RecordParseError(msg, line=record.line, offset=0, path=str(path)) from exc
    return records


def gate(records: Iterable[AuditRecord], min_rubric: float | None) -> list[AuditRecord]:
    """Keep records whose total reaches ``min_rubric``; keep all when it is None."""
    records = list(records)
    if min_rubric is None:
        return records
    threshold = validate_range(min_rubric, "min_rubric", 0.0, 1.0)
    kept = [record for record in records if record.total >= threshold]
    _LOGGER.info(
        "Rubric gate kept %d of %d records (min_rubric=%s)", len(kept), len(records), threshold
    )
    return kept
