"""Tests for the stage coordinator and its manifest."""

from __future__ import annotations

import json

import pytest

from rerank_distill.config import Settings
from rerank_distill.exceptions import DataError
from rerank_distill.mock_judge import MockTeacher
from rerank_distill.models import Candidate, CandidatePool, Qrels
from rerank_distill.pipeline import (
    DECISIONS_FILE,
    EXAMPLES_FILE,
    INCOMPLETE_FILE,
    MANIFEST_NAME,
    SCORES_FILE,
    STAGE_DIALOGUE,
    STAGE_FILTER,
    STAGE_FIT,
    STAGE_JUDGE,
    Manifest,
    Pipeline,
    PipelineInputs,
    pool_filter_groups,
    stage_config_hash,
    teacher_session,
)

ALL_STAGES = [STAGE_JUDGE, STAGE_FIT, STAGE_FILTER, STAGE_DIALOGUE]


@pytest.fixture
def inputs(fixtures_dir) -> PipelineInputs:
    base = fixtures_dir / "pipeline"
    return PipelineInputs(
        queries=base / "queries.jsonl",
        documents=base / "documents.jsonl",
        pools=base / "pools.jsonl",
        qrels=base / "qrels.jsonl",
        dialogues=base / "dialogues.jsonl",
    )


def _settings(**overrides) -> Settings:
    return Settings.from_sources(
        None, {"runtime.seed": 7, "runtime.mock_teacher": True, "dialogue.n_neg": 3, **overrides}
    )


async def _run(settings, inputs, out_dir, *, force=False, jobs=1):
    teacher = MockTeacher(settings.seed)
    pipeline = Pipeline(settings, teacher, inputs, out_dir, jobs=jobs, force=force)
    await pipeline.run()
    return pipeline, teacher


async def test_runs_are_reproducible(tmp_path, inputs):
    first, _ = await _run(_settings(), inputs, tmp_path / "a", jobs=1)
    second, _ = await _run(_settings(), inputs, tmp_path / "b", jobs=4)

    manifest_a = (tmp_path / "a" / MANIFEST_NAME).read_bytes()
    assert manifest_a == (tmp_path / "b" / MANIFEST_NAME).read_bytes()
    entries = json.loads(manifest_a)
    assert [entry["stage"] for entry in entries] == ALL_STAGES
    assert set(entries[0]["inputs"]) == {"queries.jsonl", "documents.jsonl", "pools.jsonl"}
    assert "preferences.jsonl" in entries[1]["inputs"]
    assert all(entry["seed"] == 7 for entry in entries)
    assert first.skipped_stages == []


async def test_artifacts(tmp_path, inputs):
    pipeline, _ = await _run(_settings(), inputs, tmp_path)

    scores = [json.loads(line) for line in pipeline.artifact(SCORES_FILE).read_text().splitlines()]
    assert {row["query_id"] for row in scores} == {"pq1", "pq2", "pq3", "pq4", "pq5"}
    assert all(0.0 <= row["score"] <= 1.0 for row in scores)

    decisions = [json.loads(line) for line in pipeline.artifact(DECISIONS_FILE).read_text().splitlines()]
    assert {row["doc_id"] for row in decisions if row["query_id"] == "pq1"} == {"d03", "d04"}
    suspect = next(row for row in decisions if row["doc_id"] == "d08")
    assert suspect["gap"] < 0
    if suspect["kept"]:
        assert (suspect["bucket"], suspect["reason"]) == ("hard_negative", "cross_verified")
    else:
        assert suspect["bucket"] == "suspect_error"

    examples = pipeline.artifact(EXAMPLES_FILE).read_text().splitlines()
    incomplete = pipeline.artifact(INCOMPLETE_FILE).read_text().splitlines()
    assert len(examples) + len(incomplete) == 42
    assert not any(json.loads(line)["query_id"] == "dlg20:q4" for line in examples)


async def test_second_run_short_circuits(tmp_path, inputs):
    await _run(_settings(), inputs, tmp_path)
    before = (tmp_path / MANIFEST_NAME).read_bytes()

    pipeline, teacher = await _run(_settings(), inputs, tmp_path)
    assert pipeline.skipped_stages == ALL_STAGES
    assert teacher.calls == 0
    assert (tmp_path / MANIFEST_NAME).read_bytes() == before

    forced, forced_teacher = await _run(_settings(), inputs, tmp_path, force=True)
    assert forced.skipped_stages == []
    assert forced_teacher.calls > 0
    assert (tmp_path / MANIFEST_NAME).read_bytes() == before


async def test_changed_section_reruns_dependent_stages(tmp_path, inputs):
    await _run(_settings(), inputs, tmp_path)
    pipeline, _ = await _run(_settings(**{"filter.hard_gap": 0.3}), inputs, tmp_path)
    assert pipeline.skipped_stages == [STAGE_JUDGE, STAGE_FIT]

    relocated, _ = await _run(
        _settings(**{"filter.hard_gap": 0.3, "runtime.cache_dir": str(tmp_path / "c")}),
        inputs,
        tmp_path,
    )
    assert relocated.skipped_stages == ALL_STAGES


async def test_tampered_output_reruns_stage(tmp_path, inputs):
    await _run(_settings(), inputs, tmp_path)
    (tmp_path / DECISIONS_FILE).write_text("", encoding="utf-8")
    pipeline, _ = await _run(_settings(), inputs, tmp_path)
    assert STAGE_FILTER not in pipeline.skipped_stages
    assert STAGE_JUDGE in pipeline.skipped_stages


async def test_missing_input_is_a_data_error(tmp_path, inputs):
    broken = PipelineInputs(
        inputs.queries, inputs.documents, tmp_path / "nope.jsonl", inputs.qrels, inputs.dialogues
    )
    with pytest.raises(DataError):
        await _run(_settings(), broken, tmp_path / "out")


def test_corrupt_manifest(tmp_path):
    path = tmp_path / MANIFEST_NAME
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataError):
        Manifest.load(path)
    assert Manifest.load(tmp_path / "absent.json").entries == {}


def test_stage_hash_covers_only_relevant_sections():
    base = _settings()
    tuned = _settings(**{"dialogue.n_neg": 5})
    assert stage_config_hash(base, STAGE_JUDGE) == stage_config_hash(tuned, STAGE_JUDGE)
    assert stage_config_hash(base, STAGE_DIALOGUE) != stage_config_hash(tuned, STAGE_DIALOGUE)
    live = _settings(**{"runtime.mock_teacher": False})
    assert stage_config_hash(base, STAGE_FIT) == stage_config_hash(live, STAGE_FIT)
    assert stage_config_hash(base, STAGE_JUDGE) != stage_config_hash(live, STAGE_JUDGE)


def test_pool_filter_groups():
    pools = {
        "q1": CandidatePool("q1", (Candidate("p", 0.6), Candidate("a", 0.8), Candidate("b", 0.3))),
        "q2": CandidatePool("q2", (Candidate("x", 0.5),)),
    }
    qrels = Qrels({("q1", "p"): 2, ("q2", "y"): 1})
    groups = pool_filter_groups(pools, qrels, {("q1", "p"): 0.9, ("q1", "a"): 0.4})
    assert list(groups) == ["q1"]
    group = groups["q1"]
    assert group.positive_sim == 0.6
    assert group.positive_verifier_score == 0.9
    assert [(c.doc_id, c.verifier_score) for c in group.candidates] == [("a", 0.4), ("b", None)]


async def test_teacher_session_yields_mock():
    async with teacher_session(_settings()) as teacher:
        assert isinstance(teacher, MockTeacher)
        assert teacher.seed == 7
