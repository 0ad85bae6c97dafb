"""Tests for ranking metrics and evaluation reports."""

from __future__ import annotations

import math
import random

import pytest

from rerank_distill.exceptions import ConfigurationError, ValidationError
from rerank_distill.metrics import (
    SKIP_NO_RELEVANT,
    SKIP_NOT_IN_QRELS,
    CutoffSet,
    average_precision,
    evaluate_run,
    f1_at_k,
    mrr,
    ndcg_at_k,
    precision_at_k,
    recall_at_k,
    render_text,
)
from rerank_distill.models import Qrels, RunRanking
from rerank_distill.records import read_qrels, read_run

CATEGORIES = {"q1": "finance", "q2": "finance", "q3": "medical"}


@pytest.fixture
def eval_dir(fixtures_dir):
    return fixtures_dir / "eval"


@pytest.mark.parametrize("run_name", ["run.jsonl", "run.trec"])
def test_golden_values(eval_dir, run_name):
    runs = read_run(eval_dir / run_name)
    qrels = read_qrels(eval_dir / "qrels.jsonl")
    report = evaluate_run(runs, qrels, CutoffSet((1, 2, 3)), CATEGORIES)

    assert report.per_query["q1"]["MAP"] == pytest.approx(5 / 6, abs=1e-6)
    assert report.per_query["q2"]["NDCG@2"] == pytest.approx(0.630930, abs=1e-6)
    assert report.per_query["q3"]["F1@3"] == pytest.approx(0.4, abs=1e-6)
    assert report.categories["finance"].queries == 2
    assert report.categories["medical"].queries == 1
    assert report.categories["finance"].aggregate["MAP"] == pytest.approx((5 / 6 + 0.5) / 2)


def _oracle_dcg(grades):
    return sum((2**grade - 1) / math.log2(rank + 1) for rank, grade in enumerate(grades, start=1))


def _oracle_ndcg(ranking, grades, k):
    depth = len(ranking) if k is None else k
    ideal_depth = len(grades) if k is None else k
    ideal = _oracle_dcg(sorted(grades.values(), reverse=True)[:ideal_depth])
    return _oracle_dcg([grades.get(d, 0) for d in ranking[:depth]]) / ideal


def _oracle_ap_rr(ranking, grades):
    relevant = {doc for doc, grade in grades.items() if grade > 0}
    precisions = []
    for doc in relevant:
        if doc in ranking:
            rank = ranking.index(doc) + 1
            precisions.append(sum(1 for d in ranking[:rank] if d in relevant) / rank)
    first = next((i for i, d in enumerate(ranking, start=1) if d in relevant), None)
    return sum(precisions) / len(relevant), 0.0 if first is None else 1 / first


def _oracle_set(ranking, grades, k):
    relevant = {doc for doc, grade in grades.items() if grade > 0}
    hits = sum(1 for d in ranking[:k] if d in relevant)
    precision, recall = hits / k, hits / len(relevant)
    f1 = 0.0 if hits == 0 else 2 * precision * recall / (precision + recall)
    return recall, precision, f1


def test_metrics_match_brute_force_oracle():
    rng = random.Random(2024)
    checked = 0
    while checked < 500:
        universe = [f"d{i:02d}" for i in range(rng.randint(2, 12))]
        grades = {doc: rng.randint(0, 3) for doc in universe if rng.random() < 0.8}
        if not any(grades.values()):
            continue
        run_docs = rng.sample(universe, rng.randint(1, len(universe)))
        run = RunRanking("q", tuple((doc, float(rng.randint(0, 5))) for doc in run_docs))
        ranking = sorted(run_docs, key=lambda d: (-dict(run.scored)[d], d))
        assert list(run.ranked_ids) == ranking

        ap, reciprocal = _oracle_ap_rr(ranking, grades)
        assert average_precision(run, grades) == pytest.approx(ap, abs=1e-12)
        assert mrr(run, grades) == pytest.approx(reciprocal, abs=1e-12)
        for k in (1, 3, 10, None):
            assert ndcg_at_k(run, grades, k) == pytest.approx(
                _oracle_ndcg(ranking, grades, k), abs=1e-12
            )
        for k in (1, 3, 5, 10, 20):
            recall, precision, f1 = _oracle_set(ranking, grades, k)
            assert recall_at_k(run, grades, k) == pytest.approx(recall, abs=1e-12)
            assert precision_at_k(run, grades, k) == pytest.approx(precision, abs=1e-12)
            assert f1_at_k(run, grades, k) == pytest.approx(f1, abs=1e-12)
        checked += 1


def test_report_ignores_record_order():
    rng = random.Random(11)
    runs, judged = {}, {}
    for q in range(6):
        query_id = f"q{q}"
        docs = [f"d{i}" for i in range(10)]
        runs[query_id] = [(doc, float(rng.randint(0, 4))) for doc in docs]
        judged.update({(query_id, doc): rng.randint(0, 3) for doc in docs[:6]})
        judged[(query_id, docs[0])] = 2
    cutoffs = CutoffSet((1, 3, 5, 10, 20))
    categories = {f"q{q}": ("a", "b")[q % 2] for q in range(6)}

    def report(seed):
        order = random.Random(seed)
        query_ids = list(runs)
        order.shuffle(query_ids)
        shuffled_runs = {}
        for query_id in query_ids:
            scored = list(runs[query_id])
            order.shuffle(scored)
            shuffled_runs[query_id] = RunRanking(query_id, tuple(scored))
        pairs = list(judged.items())
        order.shuffle(pairs)
        return evaluate_run(shuffled_runs, Qrels(dict(pairs)), cutoffs, categories).to_dict()

    baseline = report(0)
    for seed in range(1, 6):
        assert report(seed) == baseline


def test_full_ndcg_and_missing_relevant():
    run = RunRanking("q", (("a", 0.9), ("b", 0.1)))
    grades = {"a": 2, "c": 3}
    assert ndcg_at_k(run, grades) == pytest.approx(3 / (7 + 3 / math.log2(3)))
    assert average_precision(run, grades) == pytest.approx(0.5)
    assert recall_at_k(run, grades, 10) == pytest.approx(0.5)


def test_query_without_relevant_documents_raises():
    run = RunRanking("q", (("a", 0.9),))
    with pytest.raises(ValidationError):
        average_precision(run, {"a": 0})
    with pytest.raises(ValidationError):
        ndcg_at_k(run, {})
    with pytest.raises(ValidationError):
        precision_at_k(run, {"a": 1}, 0)


def test_report_lists_skipped_and_mismatched_queries():
    runs = {
        "q1": RunRanking("q1", (("a", 1.0),)),
        "q2": RunRanking("q2", (("b", 1.0),)),
        "q9": RunRanking("q9", (("c", 1.0),)),
    }
    qrels = Qrels({("q1", "a"): 1, ("q2", "b"): 0, ("q5", "x"): 2})
    report = evaluate_run(runs, qrels, CutoffSet((1,)))

    assert list(report.per_query) == ["q1"]
    assert report.skipped == [("q2", SKIP_NO_RELEVANT), ("q9", SKIP_NOT_IN_QRELS)]
    assert report.missing_from_run == ["q5"]
    assert report.missing_from_qrels == ["q9"]
    assert report.aggregate["MAP"] == 1.0
    encoded = report.to_dict()
    assert encoded["aggregate"]["NDCG"] == encoded["aggregate"]["NDCG@full"]
    assert encoded["aggregate"]["F1"] == encoded["aggregate"]["F1@1"]
    assert encoded["diagnostics"] == {"missing_from_run": ["q5"], "missing_from_qrels": ["q9"]}


def test_uncategorized_queries_are_grouped():
    runs = {"q1": RunRanking("q1", (("a", 1.0),)), "q2": RunRanking("q2", (("a", 1.0),))}
    qrels = Qrels({("q1", "a"): 1, ("q2", "a"): 1})
    report = evaluate_run(runs, qrels, CutoffSet((1,)), {"q1": "travel"})
    assert list(report.categories) == ["travel", "uncategorized"]


def test_empty_report_has_no_means():
    report = evaluate_run({}, Qrels({("q", "a"): 1}), CutoffSet((1,)))
    assert report.aggregate == {}
    assert report.to_dict()["aggregate"] == {}


@pytest.mark.parametrize("ks", [(), (0,), (3, 1), (1, 1), (True,)])
def test_cutoff_validation(ks):
    with pytest.raises(ConfigurationError):
        CutoffSet(ks)


def test_metric_names_order():
    assert CutoffSet((1, 3)).metric_names() == [
        "MAP", "MRR", "NDCG@1", "NDCG@3", "NDCG@full", "R@1", "R@3", "P@1", "P@3", "F1@1", "F1@3",
    ]


def test_render_text(eval_dir):
    report = evaluate_run(
        read_run(eval_dir / "run.jsonl"),
        read_qrels(eval_dir / "qrels.jsonl"),
        CutoffSet((1, 3)),
        CATEGORIES,
    )
    text = render_text(report, title="golden")
    assert "All (n=3)" in text
    assert "finance (n=2)" in text
    assert "medical (n=1)" in text
    map_line = next(line for line in text.splitlines() if line.startswith("MAP"))
    assert f"{report.aggregate['MAP']:.4f}" in map_line
