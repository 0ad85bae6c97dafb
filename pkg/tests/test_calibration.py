"""Tests for score-distribution diagnostics."""

from __future__ import annotations

import json

import numpy as np
import pytest

from rerank_distill.calibration import (
    band_occupancy,
    build_distribution_report,
    histogram,
    read_scores,
    render_text,
    skewness,
    threshold_grid,
    threshold_sweep,
)
from rerank_distill.exceptions import DegenerateDistributionError, ValidationError
from rerank_distill.models import Qrels


def test_occupancy_of_collapsed_scores():
    assert band_occupancy([0.0] * 50) == (1.0, 0.0, 0.0, 0.0, 0.0)


def test_occupancy_of_uniform_scores():
    scores = np.random.default_rng(0).uniform(0.0, 1.0, 10_000)
    for share in band_occupancy(scores):
        assert share == pytest.approx(0.2, abs=0.02)


def test_occupancy_band_edges():
    assert band_occupancy([0.2, 0.4, 0.6, 0.8, 1.0]) == (0.0, 0.2, 0.2, 0.2, 0.4)
    with pytest.raises(ValidationError):
        band_occupancy([])
    with pytest.raises(ValidationError):
        band_occupancy([0.5, 1.2])


def test_skewness_sign_and_symmetry():
    scores = np.random.default_rng(1).beta(2.0, 8.0, 500)
    skew = skewness(scores)
    assert skew > 0
    assert skewness(1.0 - scores) == pytest.approx(-skew, abs=1e-10)
    assert skewness([0.1, 0.5, 0.9]) == pytest.approx(0.0, abs=1e-12)


def test_skewness_errors():
    with pytest.raises(ValidationError):
        skewness([0.1, 0.2])
    with pytest.raises(DegenerateDistributionError):
        skewness([0.3, 0.3, 0.3])


def test_threshold_grid():
    grid = threshold_grid(0.1)
    assert len(grid) == 11
    assert grid[0] == 0.0
    assert grid[-1] == 1.0
    assert threshold_grid(0.05)[-1] == 1.0
    with pytest.raises(ValidationError):
        threshold_grid(0.0)


def test_threshold_sweep_values():
    rows = threshold_sweep([0.1, 0.4, 0.6, 0.9], [0, 0, 1, 1], grid_step=0.5)
    assert [row.threshold for row in rows] == [0.0, 0.5, 1.0]
    assert (rows[0].precision, rows[0].recall) == (0.5, 1.0)
    assert rows[0].f1 == pytest.approx(2 / 3)
    assert (rows[1].precision, rows[1].recall, rows[1].f1) == (1.0, 1.0, 1.0)
    assert rows[2].predicted_positive == 0
    assert rows[2].precision is None
    assert rows[2].f1 is None
    assert rows[2].to_record()["precision_undefined"] is True


def test_threshold_sweep_validation():
    with pytest.raises(ValidationError):
        threshold_sweep([0.1, 0.2], [1])
    with pytest.raises(ValidationError):
        threshold_sweep([0.1, 0.2], [1, 2])


def test_histogram_includes_upper_edge():
    counts, edges = histogram([0.0, 0.05, 0.5, 1.0], bins=10)
    assert counts == [2, 0, 0, 0, 0, 1, 0, 0, 0, 1]
    assert edges[0] == 0.0
    assert edges[-1] == 1.0
    with pytest.raises(ValidationError):
        histogram([0.5], bins=0)


def test_report_notes_undefined_skewness_and_single_class():
    report = build_distribution_report([0.5, 0.5, 0.5], [1, 1, 1], grid_step=0.5)
    assert report.skewness is None
    assert report.degenerate_labels
    assert any("skewness undefined" in note for note in report.notes)
    assert "labels contain a single class" in report.notes
    encoded = report.to_dict()
    assert encoded["band_occupancy"]["3"] == 1.0
    assert encoded["mid_band_share"] == 1.0
    assert len(encoded["threshold_sweep"]) == 3


def test_report_without_labels_has_no_sweep():
    report = build_distribution_report([0.1, 0.3, 0.9])
    assert report.threshold_sweep is None
    assert "threshold_sweep" not in report.to_dict()
    text = render_text(report)
    assert "Band occupancy:" in text
    assert "Threshold sweep:" not in text


def test_render_text_marks_undefined_values():
    report = build_distribution_report([0.1, 0.3, 0.9], [0, 1, 1], grid_step=0.5)
    text = render_text(report)
    assert "Threshold sweep:" in text
    assert "n/a" in text


def test_read_scores_with_qrels_and_labels(tmp_path):
    path = tmp_path / "scores.jsonl"
    rows = [
        {"query_id": "q", "doc_id": "a", "score": 0.9, "label": 0},
        {"query_id": "q", "doc_id": "b", "score": 0.2, "label": 1},
    ]
    path.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")

    scores, labels = read_scores(path)
    assert scores == [0.9, 0.2]
    assert labels == [0, 1]
    _, from_qrels = read_scores(path, Qrels({("q", "a"): 2}))
    assert from_qrels == [1, 0]


def test_read_scores_without_labels(tmp_path):
    path = tmp_path / "scores.jsonl"
    path.write_text(json.dumps({"score": 0.4}) + "\n", encoding="utf-8")
    assert read_scores(path) == ([0.4], None)
