"""
Ranking evaluation: MAP, MRR, NDCG@k, Recall@k, Precision@k and F1@k.

Runs are ordered by (score descending, doc_id ascending). Queries without a
relevant document are excluded from every mean and listed in the report,
and run/qrels query-id mismatches are reported as diagnostics.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .const import CUTOFF_FULL, DEFAULT_CUTOFFS
from .context_logger import ContextLogger
from .exceptions import ConfigurationError, ValidationError
from .records import round_float

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

    from .models import Qrels, RunRanking

_LOGGER = logging.getLogger(__name__)

Cutoff = int | str

UNCATEGORIZED = "uncategorized"
SKIP_NO_RELEVANT = "no_relevant_documents"
SKIP_NOT_IN_QRELS = "not_in_qrels"


@dataclass(frozen=True, slots=True)
class CutoffSet:
    """Rank cutoffs; NDCG is additionally reported over the full ranking."""

    ks: tuple[int, ...] = DEFAULT_CUTOFFS

    def __post_init__(self) -> None:
        """Validate that cutoffs are positive and strictly increasing."""
        ks = tuple(self.ks)
        if not ks:
            msg = "At least one cutoff is required"
            raise ConfigurationError(msg)
        if any(isinstance(k, bool) or not isinstance(k, int) or k < 1 for k in ks):
            msg = "Cutoffs must be positive integers"
            raise ConfigurationError(msg, details={"cutoffs": list(ks)})
        if any(b <= a for a, b in zip(ks, ks[1:], strict=False)):
            msg = "Cutoffs must be strictly increasing"
            raise ConfigurationError(msg, details={"cutoffs": list(ks)})
        object.__setattr__(self, "ks", ks)

    @property
    def largest(self) -> int:
        """Return the largest cutoff."""
        return self.ks[-1]

    def metric_names(self) -> list[str]:
        """Return report columns in display order."""
        names = ["MAP", "MRR"]
        names += [f"NDCG@{k}" for k in self.ks] + [f"NDCG@{CUTOFF_FULL}"]
        names += [f"R@{k}" for k in self.ks]
        names += [f"P@{k}" for k in self.ks]
        names += [f"F1@{k}" for k in self.ks]
        return names


def _relevant(rel: Mapping[str, int]) -> set[str]:
    return {doc_id for doc_id, grade in rel.items() if grade > 0}


def _require_relevant(relevant: set[str], run: RunRanking) -> None:
    if not relevant:
        msg = "Query has no relevant documents"
        raise ValidationError(msg, details={"query_id": run.query_id})


def _check_k(k: int) -> int:
    if isinstance(k, bool) or not isinstance(k, int) or k < 1:
        msg = "k must be a positive integer"
        raise ValidationError(msg, details={"k": k})
    return k


def average_precision(run: RunRanking, rel: Mapping[str, int]) -> float:
    """
    Average precision over the full ranking.

    Relevant documents missing from the run contribute 0.

    Raises:
        ValidationError: If the query has no relevant document.

    """
    relevant = _relevant(rel)
    _require_relevant(relevant, run)
    hits = 0
    total = 0.0
    for rank, doc_id in enumerate(run.ranked_ids, start=1):
        if doc_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mrr(run: RunRanking, rel: Mapping[str, int]) -> float:
    """Reciprocal rank of the first relevant document, 0 when none is retrieved."""
    relevant = _relevant(rel)
    _require_relevant(relevant, run)
    for rank, doc_id in enumerate(run.ranked_ids, start=1):
        if doc_id in relevant:
            return 1.0 / rank
    return 0.0


def _dcg(grades: Sequence[int]) -> float:
    if not grades:
        return 0.0
    gains = np.exp2(np.asarray(grades, dtype=float)) - 1.0
    discounts = np.log2(np.arange(2, len(grades) + 2, dtype=float))
    return float(np.sum(gains / discounts))


def ndcg_at_k(run: RunRanking, rel: Mapping[str, int], k: Cutoff = CUTOFF_FULL) -> float:
    """
    NDCG with gain ``2**grade - 1`` and discount ``log2(rank + 1)``.

    Args:
        run: Ranked documents.
        rel: Grades of the query's judged documents.
        k: Cutoff, or ``"full"`` for the whole ranking.

    Raises:
        ValidationError: If every grade is zero.

    """
    ideal = sorted((grade for grade in rel.values() if grade > 0), reverse=True)
    if not ideal:
        msg = "Query has no graded documents"
        raise ValidationError(msg, details={"query_id": run.query_id})
    ranked = run.ranked_ids
    if k != CUTOFF_FULL:
        k = _check_k(k)  # type: ignore[arg-type]
        ranked = ranked[:k]
        ideal = ideal[:k]
    return _dcg([rel.get(doc_id, 0) for doc_id in ranked]) / _dcg(ideal)


def _hits_at_k(run: RunRanking, relevant: set[str], k: int) -> int:
    return sum(1 for doc_id in run.ranked_ids[: _check_k(k)] if doc_id in relevant)


def recall_at_k(run: RunRanking, rel: Mapping[str, int], k: int) -> float:
    """Share of relevant documents within the top ``k``."""
    relevant = _relevant(rel)
    _require_relevant(relevant, run)
    return _hits_at_k(run, relevant, k) / len(relevant)


def precision_at_k(run: RunRanking, rel: Mapping[str, int], k: int) -> float:
    """Relevant documents in the top ``k``, divided by ``k``."""
    return _hits_at_k(run, _relevant(rel), k) / k


def f1_at_k(run: RunRanking, rel: Mapping[str, int], k: int) -> float:
    """Harmonic mean of P@k and R@k, 0 when both are 0."""
    precision = precision_at_k(run, rel, k)
    recall = recall_at_k(run, rel, k)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def query_metrics(run: RunRanking, rel: Mapping[str, int], cutoffs: CutoffSet) -> dict[str, float]:
    """Every metric of one query, keyed by report column."""
    row = {"MAP": average_precision(run, rel), "MRR": mrr(run, rel)}
    for k in cutoffs.ks:
        row[f"NDCG@{k}"] = ndcg_at_k(run, rel, k)
    row[f"NDCG@{CUTOFF_FULL}"] = ndcg_at_k(run, rel, CUTOFF_FULL)
    for k in cutoffs.ks:
        row[f"R@{k}"] = recall_at_k(run, rel, k)
    for k in cutoffs.ks:
        row[f"P@{k}"] = precision_at_k(run, rel, k)
    for k in cutoffs.ks:
        row[f"F1@{k}"] = f1_at_k(run, rel, k)
    return row


def mean_rows(rows: Iterable[Mapping[str, float]], names: Sequence[str]) -> dict[str, float]:
    """Arithmetic mean per column; empty input gives an empty mapping."""
    rows = list(rows)
    if not rows:
        return {}
    return {name: math.fsum(row[name] for row in rows) / len(rows) for name in names}


@dataclass(slots=True)
class CategoryReport:
    """Means over the queries of one category."""

    queries: int
    aggregate: dict[str, float]


@dataclass(slots=True)
class EvalReport:
    """Per-query metrics, means, per-category breakdown and diagnostics."""

    cutoffs: CutoffSet
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    aggregate: dict[str, float] = field(default_factory=dict)
    categories: dict[str, CategoryReport] = field(default_factory=dict)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    missing_from_run: list[str] = field(default_factory=list)
    missing_from_qrels: list[str] = field(default_factory=list)

    @property
    def query_count(self) -> int:
        """Return the number of evaluated queries."""
        return len(self.per_query)

    def aliases(self, values: Mapping[str, float]) -> dict[str, float]:
        """Add the bare ``NDCG`` (full ranking) and ``F1`` (largest cutoff) columns."""
        if not values:
            return {}
        return {
            **values,
            "NDCG": values[f"NDCG@{CUTOFF_FULL}"],
            "F1": values[f"F1@{self.cutoffs.largest}"],
        }

    def to_dict(self) -> dict[str, Any]:
        """Encode as a JSON-ready mapping with rounded values."""

        def rounded(values: Mapping[str, float]) -> dict[str, float]:
            return {name: round_float(value) for name, value in self.aliases(values).items()}

        return {
            "cutoffs": list(self.cutoffs.ks),
            "queries": self.query_count,
            "aggregate": rounded(self.aggregate),
            "categories": {
                name: {"queries": report.queries, "aggregate": rounded(report.aggregate)}
                for name, report in self.categories.items()
            },
            "per_query": {qid: rounded(row) for qid, row in self.per_query.items()},
            "skipped": [{"query_id": qid, "reason": reason} for qid, reason in self.skipped],
            "diagnostics": {
                "missing_from_run": self.missing_from_run,
                "missing_from_qrels": self.missing_from_qrels,
            },
        }


def evaluate_run(
    runs: Mapping[str, RunRanking],
    qrels: Qrels,
    cutoffs: CutoffSet | None = None,
    category_map: Mapping[str, str | None] | None = None,
) -> EvalReport:
    """
    Evaluate every query of a run.

    Args:
        runs: Rankings keyed by query id.
        qrels: Relevance judgments.
        cutoffs: Rank cutoffs.
        category_map: Optional query id to category; queries without one are
            grouped as ``uncategorized``.

    Returns:
        The report. Per-query rows and categories are in sorted order.

    """
    cutoffs = cutoffs or CutoffSet()
    logger = ContextLogger(_LOGGER, "metrics").new_operation("evaluate_run")
    report = EvalReport(cutoffs=cutoffs)
    report.missing_from_qrels = sorted(qid for qid in runs if qid not in qrels)
    report.missing_from_run = sorted(qid for qid in qrels.query_ids() if qid not in runs)

    for query_id in sorted(runs):
        if query_id not in qrels:
            report.skipped.append((query_id, SKIP_NOT_IN_QRELS))
            continue
        rel = qrels.for_query(query_id)
        if not _relevant(rel):
            report.skipped.append((query_id, SKIP_NO_RELEVANT))
            continue
        report.per_query[query_id] = query_metrics(runs[query_id], rel, cutoffs)

    names = cutoffs.metric_names()
    report.aggregate = mean_rows(report.per_query.values(), names)
    if category_map is not None:
        grouped: dict[str, list[dict[str, float]]] = defaultdict(list)
        for query_id, row in report.per_query.items():
            grouped[category_map.get(query_id) or UNCATEGORIZED].append(row)
        report.categories = {
            name: CategoryReport(queries=len(rows), aggregate=mean_rows(rows, names))
            for name, rows in sorted(grouped.items())
        }

    if report.skipped:
        logger.warning("Queries excluded from means", count=len(report.skipped))
    if report.missing_from_run:
        logger.warning("Judged queries missing from the run", count=len(report.missing_from_run))
    logger.info("Evaluated run", queries=report.query_count)
    return report


def _table(title: str, columns: Sequence[tuple[str, Mapping[str, float]]], names: Sequence[str]) -> list[str]:
    label_width = max(len(name) for name in (*names, title))
    col_width = max(8, *(len(header) for header, _ in columns))
    lines = [title.ljust(label_width) + "".join(f"  {h:>{col_width}}" for h, _ in columns)]
    lines.append("-" * len(lines[0]))
    for name in names:
        cells = "".join(
            f"  {values[name]:>{col_width}.4f}" if name in values else f"  {'-':>{col_width}}"
            for _, values in columns
        )
        lines.append(name.ljust(label_width) + cells)
    return lines


def render_text(report: EvalReport, *, title: str = "Run") -> str:
    """
    Render the report as aligned plain-text tables.

    The overall table comes first, then one table per category captioned
    with its query count, then the skipped queries and diagnostics.
    """
    names = [*report.cutoffs.metric_names(), "NDCG", "F1"]
    lines = _table(title, [(f"All (n={report.query_count})", report.aliases(report.aggregate))], names)
    for category, sub in report.categories.items():
        lines.append("")
        lines.extend(_table(title, [(f"{category} (n={sub.queries})", report.aliases(sub.aggregate))], names))
    if report.skipped:
        lines.append("")
        lines.append(f"Skipped queries ({len(report.skipped)}):")
        lines.extend(f"  {qid}: {reason}" for qid, reason in report.skipped)
    if report.missing_from_run:
        lines.append("")
        lines.append(f"Judged queries missing from the run ({len(report.missing_from_run)}):")
        lines.extend(f"  {qid}" for qid in report.missing_from_run)
    return "\n".join(lines) + "\n"
