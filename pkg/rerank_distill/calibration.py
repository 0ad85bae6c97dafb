"""
Score-distribution diagnostics.

A reranker whose scores pile up near 0 cannot be thresholded. These
helpers describe a score set by its histogram, its occupancy of the five
relevance bands, its skewness and, given binary labels, how precision and
recall move as the cut-off threshold sweeps over [0, 1].
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import stats

from .const import BAND_EDGES, BAND_LABELS, DEFAULT_BINS, DEFAULT_GRID_STEP
from .exceptions import DegenerateDistributionError, ValidationError
from .records import RecordKind, read_jsonl, round_float
from .validation import validate_identifier, validate_range

if TYPE_CHECKING:
    from collections.abc import Sequence
    from pathlib import Path

    from .models import Qrels

_LOGGER = logging.getLogger(__name__)

MIN_SKEW_SAMPLES = 3
MID_BAND = 3


def _as_scores(scores: Sequence[float]) -> np.ndarray:
    values = np.asarray(scores, dtype=float)
    if values.ndim != 1 or values.size == 0:
        msg = "At least one score is required"
        raise ValidationError(msg)
    if not np.all(np.isfinite(values)) or np.any((values < 0) | (values > 1)):
        msg = "Scores must lie in [0, 1]"
        raise ValidationError(msg, details={"min": float(np.nanmin(values)), "max": float(np.nanmax(values))})
    return values


def band_occupancy(scores: Sequence[float]) -> tuple[float, ...]:
    """
    Fraction of scores in each of the five bands.

    Band edges are half-open on the right, with 1.0 in the top band.

    Raises:
        ValidationError: For empty input or scores outside [0, 1].

    """
    values = _as_scores(scores)
    bands = np.searchsorted(np.asarray(BAND_EDGES), values, side="right")
    counts = np.bincount(bands, minlength=len(BAND_LABELS))
    return tuple(float(count) / values.size for count in counts)


def skewness(scores: Sequence[float]) -> float:
    """
    Adjusted Fisher-Pearson skewness ``g1 * sqrt(n (n - 1)) / (n - 2)``.

    Raises:
        ValidationError: For fewer than three scores.
        DegenerateDistributionError: For a zero-variance score set.

    """
    values = np.asarray(scores, dtype=float)
    if values.size < MIN_SKEW_SAMPLES:
        msg = "Skewness needs at least three scores"
        raise ValidationError(msg, details={"n": int(values.size)})
    if np.ptp(values) == 0:
        msg = "degenerate distribution: scores have zero variance"
        raise DegenerateDistributionError(msg, details={"value": float(values[0])})
    return float(stats.skew(values, bias=False))


@dataclass(frozen=True, slots=True)
class SweepRow:
    """Classification quality at one threshold; None marks an undefined value."""

    threshold: float
    predicted_positive: int
    precision: float | None
    recall: float | None
    f1: float | None

    def to_record(self) -> dict[str, Any]:
        """Encode with rounded values."""
        return {
            "threshold": round_float(self.threshold),
            "predicted_positive": self.predicted_positive,
            "precision": None if self.precision is None else round_float(self.precision),
            "recall": None if self.recall is None else round_float(self.recall),
            "f1": None if self.f1 is None else round_float(self.f1),
            "precision_undefined": self.precision is None,
        }


def threshold_grid(grid_step: float) -> list[float]:
    """Thresholds ``0, step, 2 step, ...`` up to 1 inclusive."""
    step = validate_range(grid_step, "grid_step", 0.0, 1.0)
    if step in (0.0, 1.0):
        msg = "grid_step must lie strictly between 0 and 1"
        raise ValidationError(msg, details={"grid_step": grid_step})
    count = math.floor(round(1.0 / step, 9))
    return [round(index * step, 10) for index in range(count + 1)]


def threshold_sweep(
    scores: Sequence[float], labels: Sequence[int], grid_step: float = DEFAULT_GRID_STEP
) -> list[SweepRow]:
    """
    Precision, recall and F1 of ``score >= t`` for every grid threshold.

    Precision is undefined when nothing is predicted positive; recall is
    undefined when no label is positive. F1 is undefined when either is.

    Raises:
        ValidationError: For mismatched lengths or labels outside {0, 1}.

    """
    values = _as_scores(scores)
    truth = np.asarray(labels)
    if truth.shape != values.shape:
        msg = "scores and labels differ in length"
        raise ValidationError(msg, details={"scores": values.size, "labels": int(truth.size)})
    if not np.all(np.isin(truth, (0, 1))):
        msg = "labels must be 0 or 1"
        raise ValidationError(msg)
    truth = truth.astype(bool)
    positives = int(truth.sum())

    rows = []
    for threshold in threshold_grid(grid_step):
        predicted = values >= threshold
        tp = int(np.sum(predicted & truth))
        n_predicted = int(predicted.sum())
        precision = tp / n_predicted if n_predicted else None
        recall = tp / positives if positives else None
        if precision is None or recall is None:
            f1 = None
        elif precision + recall == 0:
            f1 = 0.0
        else:
            f1 = 2 * precision * recall / (precision + recall)
        rows.append(SweepRow(threshold, n_predicted, precision, recall, f1))
    return rows


def histogram(scores: Sequence[float], bins: int = DEFAULT_BINS) -> tuple[list[int], list[float]]:
    """Counts and edges of ``bins`` equal-width bins over [0, 1]."""
    if bins < 1:
        msg = "bins must be positive"
        raise ValidationError(msg, details={"bins": bins})
    counts, edges = np.histogram(_as_scores(scores), bins=bins, range=(0.0, 1.0))
    return [int(count) for count in counts], [round_float(edge) for edge in edges]


@dataclass(slots=True)
class DistributionReport:
    """Everything known about one score set."""

    count: int
    histogram_counts: list[int]
    histogram_edges: list[float]
    band_occupancy: tuple[float, ...]
    skewness: float | None
    notes: list[str] = field(default_factory=list)
    threshold_sweep: list[SweepRow] | None = None
    degenerate_labels: bool = False

    @property
    def mid_band_share(self) -> float:
        """Share of scores in the 0.4-0.6 band."""
        return self.band_occupancy[MID_BAND - 1]

    def to_dict(self) -> dict[str, Any]:
        """Encode as a JSON-ready mapping."""
        result: dict[str, Any] = {
            "count": self.count,
            "histogram": {"counts": self.histogram_counts, "edges": self.histogram_edges},
            "band_occupancy": {
                str(band): round_float(share)
                for band, share in enumerate(self.band_occupancy, start=1)
            },
            "mid_band_share": round_float(self.mid_band_share),
            "skewness": None if self.skewness is None else round_float(self.skewness),
            "notes": self.notes,
        }
        if self.threshold_sweep is not None:
            result["threshold_sweep"] = [row.to_record() for row in self.threshold_sweep]
            result["degenerate_labels"] = self.degenerate_labels
        return result


def build_distribution_report(
    scores: Sequence[float],
    labels: Sequence[int] | None = None,
    *,
    bins: int = DEFAULT_BINS,
    grid_step: float = DEFAULT_GRID_STEP,
) -> DistributionReport:
    """
    Describe a score set.

    Skewness that cannot be computed is reported as None with a note rather
    than failing the whole report.
    """
    counts, edges = histogram(scores, bins)
    notes = []
    try:
        skew: float | None = skewness(scores)
    except (DegenerateDistributionError, ValidationError) as exc:
        skew = None
        notes.append(f"skewness undefined: {exc.message}")

    report = DistributionReport(
        count=len(scores),
        histogram_counts=counts,
        histogram_edges=edges,
        band_occupancy=band_occupancy(scores),
        skewness=skew,
        notes=notes,
    )
    if labels is not None:
        report.threshold_sweep = threshold_sweep(scores, labels, grid_step)
        report.degenerate_labels = len(set(labels)) < 2  # noqa: PLR2004
        if report.degenerate_labels:
            report.notes.append("labels contain a single class")
    _LOGGER.info(
        "Score distribution: n=%d, band 1 share %.3f, skewness %s",
        report.count,
        report.band_occupancy[0],
        "n/a" if skew is None else f"{skew:.4f}",
    )
    return report


def read_scores(
    path: str | Path, qrels: Qrels | None = None
) -> tuple[list[float], list[int] | None]:
    """
    Read ``score`` values and, when available, binary labels.

    Labels come from qrels (grade > 0) when given, else from a ``label``
    field present on every record.
    """
    scores: list[float] = []
    labels: list[int] = []
    for record in read_jsonl(path, RecordKind.RAW):
        obj = record.value
        scores.append(validate_range(obj.get("score"), "score", 0.0, 1.0))
        if qrels is not None:
            query_id = validate_identifier(obj.get("query_id"), "query_id")
            doc_id = validate_identifier(obj.get("doc_id"), "doc_id")
            labels.append(int(qrels.grade(query_id, doc_id) > 0))
        elif "label" in obj:
            labels.append(int(obj["label"]))
    if qrels is None and len(labels) != len(scores):
        return scores, None
    return scores, labels


def render_text(report: DistributionReport) -> str:
    """Render the report as plain text."""
    lines = [f"Scores: {report.count}"]
    lines.append("Band occupancy:")
    for band, share in enumerate(report.band_occupancy, start=1):
        lines.append(f"  {band} {BAND_LABELS[band]:<20} {share:8.4f}")
    lines.append(
        "Skewness: " + ("undefined" if report.skewness is None else f"{report.skewness:.4f}")
    )
    lines.append("Histogram:")
    for count, low, high in zip(
        report.histogram_counts, report.histogram_edges, report.histogram_edges[1:], strict=False
    ):
        lines.append(f"  [{low:.2f}, {high:.2f}) {count}")
    if report.threshold_sweep is not None:
        lines.append("Threshold sweep:")
        lines.append(f"  {'t':>6} {'precision':>10} {'recall':>8} {'f1':>8}")

        def fmt(value: float | None, width: int) -> str:
            return f"{'n/a':>{width}}" if value is None else f"{value:>{width}.4f}"

        lines.extend(
            f"  {row.threshold:>6.2f} {fmt(row.precision, 10)} {fmt(row.recall, 8)} {fmt(row.f1, 8)}"
            for row in report.threshold_sweep
        )
    lines.extend(f"Note: {note}" for note in report.notes)
    return "\n".join(lines) + "\n"
