"""Tests for multi-turn training example construction."""

from __future__ import annotations

import pytest

from rerank_distill.const import JUDGE_MODE_LISTWISE
from rerank_distill.dialogue_builder import (
    DialogueBuilder,
    DialogueConfig,
    DistilledHistory,
    TrainingExample,
    build_positive,
    distill_history,
    generate_hard_negatives,
    generate_instruction,
    lexical_cosine,
    stage2_records,
    stage3_records,
    truncate_to_budget,
)
from rerank_distill.exceptions import DataError, IncompleteExampleError, ValidationError
from rerank_distill.judge_orchestrator import JudgeConfig, JudgeOrchestrator
from rerank_distill.mock_judge import MOCK_ENDPOINT, MockTeacher
from rerank_distill.models import Dialogue, DialogueTurn, Document, InstructionCategory, Query

POSITIVE = "Hold the reset button on the router to reset the password."


class ScriptedTeacher:
    """Teacher stub answering from a list, repeating the last answer."""

    def __init__(self, answers: list[str]) -> None:
        self.answers = answers
        self.calls = 0

    @property
    def endpoints(self):
        return (MOCK_ENDPOINT,)

    async def complete(self, endpoint, prompt, *, sample_tag=""):
        answer = self.answers[min(self.calls, len(self.answers) - 1)]
        self.calls += 1
        return answer


def _dialogue(dialogue_id: str = "dlg", *texts: str) -> Dialogue:
    texts = texts or (
        "I am planning a trip to Japan in April with a budget of $3,000.",
        "April is cherry blossom season in Japan, so book hotels in Kyoto and Tokyo early.",
        "Is the JR Pass worth it?",
        "For a Tokyo to Kyoto round trip the 7-day JR Pass usually pays off.",
    )
    turns = [
        DialogueTurn("user" if index % 2 == 0 else "assistant", text, index)
        for index, text in enumerate(texts)
    ]
    return Dialogue(dialogue_id, tuple(turns), category="travel")


def test_lexical_cosine():
    assert lexical_cosine("reset router", "Reset the ROUTER") == pytest.approx(2 / (2**0.5 * 3**0.5))
    assert lexical_cosine("reset router", "router reset") == pytest.approx(1.0)
    assert lexical_cosine("reset", "banana") == 0.0
    assert lexical_cosine("", "banana") == 0.0


def test_truncate_to_budget():
    text = "One two three. Four five six. Seven."
    assert truncate_to_budget(text, 10) == text
    assert truncate_to_budget(text, 6) == "One two three. Four five six."
    assert truncate_to_budget(text, 2) == "One two"


async def test_empty_history_needs_no_teacher():
    teacher = ScriptedTeacher(["unused"])
    history = await distill_history([], teacher, 16)
    assert history == DistilledHistory(0, "", 16)
    assert teacher.calls == 0
    with pytest.raises(ValidationError):
        await distill_history([], teacher, 0)


async def test_over_budget_summary_is_truncated():
    teacher = ScriptedTeacher(["Emma lives in Oslo. She works at Acme as an engineer since 2019."])
    turns = [DialogueTurn("user", "Hi", 0)]
    history = await distill_history(turns, teacher, 6)
    assert history.summary == "Emma lives in Oslo."
    assert history.source_turn_count == 1
    with pytest.raises(ValidationError):
        DistilledHistory(1, "one two three", 2)


def test_build_positive():
    turns = [DialogueTurn("user", "Q?", 4), DialogueTurn("assistant", "Answer.", 5)]
    assert build_positive("dlg", turns) == Document("dlg:t5", "Answer.")
    with pytest.raises(DataError):
        build_positive("dlg", [DialogueTurn("user", "Q?", 0), DialogueTurn("assistant", " ", 1)])


def _fixed_similarity(values):
    return lambda query, document: values[document]


async def test_hard_negatives_filtered_by_gap():
    query = Query("q", "reset router password")
    positive = Document("dlg:t1", POSITIVE)
    teacher = ScriptedTeacher(
        [
            '["Hold the reset button on the router to reset the password.",'
            ' "The router password can be reset from the admin page.",'
            ' "Bananas are yellow."]'
        ]
    )
    similarity = _fixed_similarity(
        {
            POSITIVE: 0.8,
            "The router password can be reset from the admin page.": 0.7,
            "Bananas are yellow.": 0.1,
        }
    )
    negatives = await generate_hard_negatives(query, positive, teacher, 3, similarity)
    assert [doc.id for doc in negatives.hard] == ["dlg:t1:n0"]
    assert [doc.text for doc in negatives.easy] == ["Bananas are yellow."]
    assert negatives.requested == 6


async def test_hard_negatives_cap_at_n_neg():
    query = Query("q", "reset router password")
    positive = Document("p", POSITIVE)
    texts = [f"Router note number {i}." for i in range(6)]
    teacher = ScriptedTeacher(['["' + '", "'.join(texts) + '"]'])
    similarity = _fixed_similarity({POSITIVE: 0.8, **{text: 0.75 for text in texts}})
    negatives = await generate_hard_negatives(query, positive, teacher, 2, similarity)
    assert len(negatives.hard) == 2
    assert negatives.easy == ()


async def test_no_surviving_negative_is_incomplete():
    query = Query("q", "reset router password")
    positive = Document("p", POSITIVE)
    suspects = ScriptedTeacher(['["Router manual chapter one."]'])
    similarity = _fixed_similarity({POSITIVE: 0.3, "Router manual chapter one.": 0.9})
    with pytest.raises(IncompleteExampleError):
        await generate_hard_negatives(query, positive, suspects, 1, similarity)
    with pytest.raises(IncompleteExampleError):
        await generate_hard_negatives(query, positive, ScriptedTeacher(["none"]), 1)


async def test_instruction_retry_then_omit():
    query = Query("q", "price and warranty?")
    positive = Document("p", "It costs $900 with a two-year warranty.")
    retried = ScriptedTeacher(["oops", '{"category": "aspect_constraint", "text": "Cover both."}'])
    instruction = await generate_instruction(query, positive, retried)
    assert instruction.category is InstructionCategory.ASPECT_CONSTRAINT
    assert retried.calls == 2

    failing = ScriptedTeacher(['{"category": "mood", "text": "x"}'])
    assert await generate_instruction(query, positive, failing) is None
    assert failing.calls == 2


def _example(**overrides) -> TrainingExample:
    values = {
        "query": Query("q", "reset router"),
        "distilled_history": DistilledHistory(0, "", 8),
        "positive": Document("p", POSITIVE),
        "hard_negatives": (Document("n1", "Router admin page."),),
        "easy_negatives": (Document("n2", "Bananas are yellow."),),
    }
    values.update(overrides)
    return TrainingExample(**values)


def test_example_invariants():
    with pytest.raises(ValidationError):
        _example(hard_negatives=(Document("n1", POSITIVE),))
    with pytest.raises(ValidationError):
        _example(easy_negatives=(Document("n2", "Router  admin page."),))
    with pytest.raises(ValidationError):
        _example(soft_labels={"p": 1.5})
    example = _example(soft_labels={"p": 0.9, "n1": 0.4, "n2": 0.1})
    assert [doc.id for doc in example.negatives] == ["n1", "n2"]


async def test_build_dialogue_with_mock_teacher():
    builder = DialogueBuilder(MockTeacher(seed=7), DialogueConfig(n_neg=3, seed=7))
    result = await builder.build_dialogue(_dialogue())

    assert result.incomplete == []
    first, second = result.examples
    assert first.query.id == "dlg:q0"
    assert first.distilled_history.summary == ""
    assert first.positive.id == "dlg:t1"
    assert second.query.id == "dlg:q2"
    assert second.distilled_history.source_turn_count == 2
    assert "Japan" in second.distilled_history.summary
    for example in result.examples:
        assert 1 <= len(example.negatives) <= 3
        assert example.instruction is not None
        record = example.to_record()
        assert record["category"] == "travel"
        assert record["positive"]["id"] == example.positive.id


async def test_unanswered_and_empty_answers():
    builder = DialogueBuilder(MockTeacher(seed=1), DialogueConfig(n_neg=2))
    unanswered = await builder.build_dialogue(
        _dialogue("open", "How do I reset my router?", "Hold the reset button.", "And the password?")
    )
    assert [example.query.id for example in unanswered.examples] == ["open:q0"]

    empty = await builder.build_dialogue(_dialogue("blank", "How do I reset my router?", ""))
    assert empty.examples == []
    assert empty.incomplete == [("blank:q0", "Current turn has no assistant answer")]


async def test_soft_labels_from_listwise_judging():
    teacher = MockTeacher(seed=3)
    orchestrator = JudgeOrchestrator(teacher, JudgeConfig(mode=JUDGE_MODE_LISTWISE, votes=1))
    builder = DialogueBuilder(
        teacher, DialogueConfig(n_neg=2, soft_labels=True), orchestrator=orchestrator
    )
    result = await builder.build_dialogue(_dialogue())
    for example in result.examples:
        assert set(example.soft_labels) == {example.positive.id, *(d.id for d in example.negatives)}
        assert all(0.0 <= label <= 1.0 for label in example.soft_labels.values())
    rows = stage2_records(result.examples)
    assert {row["label"] for row in rows} <= {round(v, 10) for e in result.examples for v in e.soft_labels.values()}

    with pytest.raises(ValidationError):
        DialogueBuilder(teacher, DialogueConfig(soft_labels=True))


async def test_build_all_is_independent_of_jobs():
    dialogues = [_dialogue(f"d{i}") for i in range(4)]
    serial = await DialogueBuilder(MockTeacher(seed=5)).build_all(dialogues, jobs=1)
    parallel = await DialogueBuilder(MockTeacher(seed=5)).build_all(dialogues, jobs=3)
    assert [[e.to_record() for e in r.examples] for r in serial] == [
        [e.to_record() for e in r.examples] for r in parallel
    ]


def test_stage_records():
    example = _example()
    rows = stage2_records([example])
    assert [(row["doc_id"], row["label"]) for row in rows] == [("p", 1.0), ("n1", 0.0), ("n2", 0.0)]
    (listwise,) = stage3_records([example])
    assert listwise["pos"] == POSITIVE
    assert listwise["negs"] == ["Router admin page.", "Bananas are yellow."]
