"""Tests for similarity-gap negative filtering."""

from __future__ import annotations

import json

import pytest

from rerank_distill.exceptions import (
    ConfigurationError,
    MissingVerifierScoreError,
    RecordParseError,
    ValidationError,
)
from rerank_distill.negative_filter import (
    Bucket,
    FilterConfig,
    FilterDecision,
    FilterGroup,
    NegativeCandidate,
    Reason,
    RelabelEntry,
    Verdict,
    classify_gap,
    compute_gap,
    cross_verify,
    easy_quota,
    filter_all,
    filter_query,
    read_filter_input,
    subsample_easy,
)


def _group(query_id: str, sims: list[float], **kwargs) -> FilterGroup:
    candidates = tuple(
        NegativeCandidate(query_id, f"{query_id}-n{i}", sim, kwargs.pop(f"v{i}", None))
        for i, sim in enumerate(sims)
    )
    return FilterGroup(query_id, 0.7, candidates, kwargs.get("positive_verifier_score"))


@pytest.mark.parametrize(
    ("neg_sim", "gap", "bucket"),
    [
        (0.75, -0.05, Bucket.SUSPECT_ERROR),
        (0.7, 0.0, Bucket.HARD_NEGATIVE),
        (0.6, 0.1, Bucket.HARD_NEGATIVE),
        (0.5, 0.2, Bucket.EASY_NEGATIVE),
        (0.35, 0.35, Bucket.EASY_NEGATIVE),
    ],
)
def test_gap_buckets(neg_sim, gap, bucket):
    computed = compute_gap(0.7, neg_sim)
    assert computed == gap
    assert classify_gap(computed) is bucket


def test_classify_respects_custom_threshold():
    assert classify_gap(0.25, hard_gap=0.3) is Bucket.HARD_NEGATIVE
    with pytest.raises(ValidationError):
        classify_gap(float("nan"))


@pytest.mark.parametrize(("n", "quota"), [(0, 0), (1, 1), (5, 1), (7, 2), (10, 2), (11, 3)])
def test_easy_quota_rounds_up(n, quota):
    assert easy_quota(n, 0.2) == quota


def test_subsample_is_seeded_and_keeps_input_order():
    easy = [
        FilterDecision("q", f"d{i:02d}", Bucket.EASY_NEGATIVE, False, Reason.EASY_SUBSAMPLED_OUT, 0.5)
        for i in range(20)
    ]
    first = subsample_easy(easy, 0.2, seed=42, scope="q")
    second = subsample_easy(list(reversed(easy)), 0.2, seed=42, scope="q")
    assert len(first) == 4
    assert {d.doc_id for d in first} == {d.doc_id for d in second}
    assert [d.doc_id for d in first] == sorted(d.doc_id for d in first)
    assert subsample_easy(easy, 0.0, seed=42) == []


@pytest.mark.parametrize(
    ("negative", "verdict"),
    [(0.7, Verdict.RELABEL), (0.55, Verdict.DROP), (0.45, Verdict.DROP), (0.3, Verdict.KEEP)],
)
def test_cross_verify(negative, verdict):
    candidate = NegativeCandidate("q", "d", 0.9, negative)
    assert cross_verify(candidate, 0.5, margin=0.1) is verdict


def test_cross_verify_needs_verifier_score():
    with pytest.raises(MissingVerifierScoreError):
        cross_verify(NegativeCandidate("q", "d", 0.9), 0.5)


def test_filter_query_decides_every_candidate_in_order():
    group = _group("q", [0.75, 0.7, 0.6, 0.5, 0.35], v0=0.9, positive_verifier_score=0.6)
    result = filter_query(group, FilterConfig(seed=3))

    assert [d.doc_id for d in result.decisions] == [f"q-n{i}" for i in range(5)]
    assert [d.bucket for d in result.decisions] == [
        Bucket.SUSPECT_ERROR,
        Bucket.HARD_NEGATIVE,
        Bucket.HARD_NEGATIVE,
        Bucket.EASY_NEGATIVE,
        Bucket.EASY_NEGATIVE,
    ]
    assert result.decisions[0].reason is Reason.RELABELED
    assert result.relabel == [RelabelEntry("q", "q-n0", 0.9, 0.6)]
    assert len(result.kept(Bucket.HARD_NEGATIVE)) == 2
    assert len(result.kept(Bucket.EASY_NEGATIVE)) == 1
    assert result.counts() == {"suspect_error": 1, "hard_negative": 2, "easy_negative": 2}


def test_cross_verified_suspect_is_kept_as_hard_negative():
    group = _group("q", [0.8], v0=0.2, positive_verifier_score=0.9)
    result = filter_query(group)
    (decision,) = result.decisions
    assert decision.kept
    assert decision.bucket is Bucket.HARD_NEGATIVE
    assert decision.reason is Reason.CROSS_VERIFIED
    assert decision.gap < 0
    assert result.kept(Bucket.HARD_NEGATIVE) == [decision]
    assert result.counts() == {"suspect_error": 0, "hard_negative": 1, "easy_negative": 0}
    assert decision.to_record()["bucket"] == "hard_negative"


def test_unverified_suspects_are_dropped_or_rejected():
    group = _group("q", [0.8])
    (decision,) = filter_query(group).decisions
    assert not decision.kept
    assert decision.reason is Reason.UNVERIFIED
    with pytest.raises(MissingVerifierScoreError):
        filter_query(group, FilterConfig(require_verifier=True))


def test_suspect_bucket_is_never_kept():
    with pytest.raises(ValidationError):
        FilterDecision("q", "d", Bucket.SUSPECT_ERROR, True, Reason.HARD_GAP, -0.1)
    with pytest.raises(ValidationError):
        FilterDecision("q", "d", Bucket.SUSPECT_ERROR, True, Reason.CROSS_VERIFIED, -0.1)


def test_filter_is_replayable_and_independent_of_other_queries():
    groups = {
        "b": _group("b", [0.1, 0.2, 0.3, 0.4, 0.05, 0.15]),
        "a": _group("a", [0.1, 0.2, 0.3, 0.4, 0.05, 0.15, 0.25, 0.45]),
    }
    config = FilterConfig(seed=9)
    first = filter_all(groups, config)
    second = filter_all(dict(reversed(list(groups.items()))), config)
    assert first.decisions == second.decisions
    assert [d.query_id for d in first.decisions][:1] == ["a"]
    alone = filter_query(groups["a"], config)
    assert [d for d in first.decisions if d.query_id == "a"] == alone.decisions


def test_global_quota_counts_all_queries_together():
    groups = {
        "a": _group("a", [0.1, 0.2]),
        "b": _group("b", [0.1, 0.2]),
    }
    per_query = filter_all(groups, FilterConfig())
    pooled = filter_all(groups, FilterConfig(global_quota=True))
    assert len(per_query.kept(Bucket.EASY_NEGATIVE)) == 2
    assert len(pooled.kept(Bucket.EASY_NEGATIVE)) == 1


@pytest.mark.parametrize(
    "kwargs", [{"hard_gap": 0.0}, {"easy_rate": 1.5}, {"margin": -0.1}]
)
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        FilterConfig(**kwargs)


def test_decision_record_rounds_gap():
    decision = FilterDecision("q", "d", Bucket.HARD_NEGATIVE, True, Reason.HARD_GAP, compute_gap(0.3, 0.2))
    assert decision.to_record() == {
        "query_id": "q",
        "doc_id": "d",
        "bucket": "hard_negative",
        "kept": True,
        "reason": "hard_gap",
        "gap": 0.1,
    }


def _write(path, rows):
    path.write_text("".join(json.dumps(row) + "\n" for row in rows), encoding="utf-8")
    return path


def test_read_filter_input_groups_rows(tmp_path):
    path = _write(
        tmp_path / "filter.jsonl",
        [
            {"query_id": "q", "doc_id": "p1", "sim": 0.6, "positive": True, "verifier_score": 0.7},
            {"query_id": "q", "doc_id": "p2", "sim": 0.8, "positive": True},
            {"query_id": "q", "doc_id": "n1", "sim": 0.5},
            {"query_id": "q", "doc_id": "n2", "sim": 0.9, "verifier_score": 0.2},
        ],
    )
    group = read_filter_input(path)["q"]
    assert group.positive_sim == 0.8
    assert group.positive_verifier_score == 0.7
    assert [(c.doc_id, c.verifier_score) for c in group.candidates] == [("n1", None), ("n2", 0.2)]


def test_read_filter_input_requires_a_positive(tmp_path):
    path = _write(tmp_path / "filter.jsonl", [{"query_id": "q", "doc_id": "n1", "sim": 0.5}])
    with pytest.raises(RecordParseError) as info:
        read_filter_input(path)
    assert info.value.line == 1


def test_read_filter_input_reports_bad_rows(tmp_path):
    path = _write(
        tmp_path / "filter.jsonl",
        [
            {"query_id": "q", "doc_id": "p", "sim": 0.5, "positive": True},
            {"query_id": "q", "doc_id": "n", "sim": "high"},
        ],
    )
    with pytest.raises(RecordParseError) as info:
        read_filter_input(path)
    assert info.value.line == 2
