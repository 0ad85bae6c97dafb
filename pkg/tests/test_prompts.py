"""Tests for prompt rendering and answer parsing."""

from __future__ import annotations

import pytest

from rerank_distill.exceptions import JudgeParseError, ValidationError
from rerank_distill.models import DialogueTurn, Document, InstructionCategory, Query
from rerank_distill.prompts import (
    PromptKind,
    detect_prompt_kind,
    parse_distractors,
    parse_instruction,
    parse_listwise_ranking,
    parse_pairwise_choice,
    render_distillation_prompt,
    render_distractor_prompt,
    render_instruction_prompt,
    render_pairwise_prompt,
    render_ranking_prompt,
)

RANKING_LINES = [
    "You are a document relevance ranking expert. Given a query",
    "and a set of documents, rank the document IDs by relevance",
    "to the query from highest to lowest.",
    "Output the ranked document IDs as a JSON array,",
    "e.g. [3, 0, 2, 1, ...].",
    "Output only the JSON array, nothing else.",
]


def test_ranking_prompt_contains_template_lines():
    query = Query("q", "best pizza in Naples")
    docs = [Document("a", "Pizza guide"), Document("b", "Train times")]
    prompt = render_ranking_prompt(query, docs)
    lines = prompt.splitlines()
    for line in RANKING_LINES:
        assert line in lines
    assert "Query: best pizza in Naples" in lines
    assert "[0] Pizza guide" in lines
    assert "[1] Train times" in lines
    assert detect_prompt_kind(prompt) is PromptKind.RANKING


def test_multiline_documents_stay_on_one_line():
    query = Query("q", "router\nreset")
    docs = [
        Document("a", "Hold the reset button\n\nfor ten seconds."),
        Document("b", "[1] Firmware\r\nnotes"),
    ]
    lines = render_ranking_prompt(query, docs).splitlines()
    assert "Query: router reset" in lines
    assert "[0] Hold the reset button for ten seconds." in lines
    assert "[1] [1] Firmware notes" in lines
    assert sum(line.startswith("[0] ") for line in lines) == 1

    pairwise = render_pairwise_prompt(query, docs[0], docs[1])
    assert "Hold the reset button for ten seconds." in pairwise
    assert "Firmware notes" in pairwise


def test_ranking_prompt_needs_documents():
    with pytest.raises(ValidationError):
        render_ranking_prompt(Query("q", "x"), [])


def test_parse_listwise_ranking_accepts_permutation():
    assert parse_listwise_ranking("[3, 0, 2, 1]", 4) == (3, 0, 2, 1)
    assert parse_listwise_ranking("Sure! The ranking is [1,0].", 2) == (1, 0)


@pytest.mark.parametrize(
    ("text", "reason"),
    [
        ("[3, 0, 0, 1]", "duplicate"),
        ("[4, 0, 2, 1]", "out_of_range"),
        ("[0, 2, 1]", "missing"),
        ("I cannot rank these.", "no_array"),
    ],
)
def test_parse_listwise_ranking_rejects(text, reason):
    with pytest.raises(JudgeParseError) as info:
        parse_listwise_ranking(text, 4)
    assert info.value.reason == reason
    assert info.value.exit_code == 2


def test_pairwise_prompt_and_choice():
    prompt = render_pairwise_prompt(Query("q", "x"), Document("a", "one"), Document("b", "two"))
    assert "Document A:\none" in prompt
    assert "Document B:\ntwo" in prompt
    assert detect_prompt_kind(prompt) is PromptKind.PAIRWISE
    assert parse_pairwise_choice("B") == "B"
    assert parse_pairwise_choice("Answer: A") == "A"
    with pytest.raises(JudgeParseError) as info:
        parse_pairwise_choice("Both are fine")
    assert info.value.reason == "no_choice"


def test_distillation_prompt_lists_turns_and_budget():
    turns = [DialogueTurn("user", "Hi  there\nfriend", 0), DialogueTurn("assistant", "Hello", 1)]
    prompt = render_distillation_prompt(turns, 64)
    assert "Use at most 64 words." in prompt
    assert "user: Hi there friend" in prompt
    assert "assistant: Hello" in prompt
    assert detect_prompt_kind(prompt) is PromptKind.DISTILLATION


def test_instruction_prompt_marks_missing_history():
    prompt = render_instruction_prompt(Query("q", "x"), Document("d", "y"), "")
    assert "History: (none)" in prompt
    assert detect_prompt_kind(prompt) is PromptKind.INSTRUCTION


def test_parse_instruction():
    category, text = parse_instruction('{"category": "aspect_constraint", "text": " Cover both. "}')
    assert category is InstructionCategory.ASPECT_CONSTRAINT
    assert text == "Cover both."
    with pytest.raises(JudgeParseError) as info:
        parse_instruction('{"category": "vibes", "text": "x"}')
    assert info.value.reason == "invalid_category"
    with pytest.raises(JudgeParseError) as info:
        parse_instruction("no json here")
    assert info.value.reason == "no_object"


def test_distractor_prompt_and_parser():
    prompt = render_distractor_prompt(Query("q", "x"), Document("d", "y"), 6)
    assert "Write 6 short passages" in prompt
    assert detect_prompt_kind(prompt) is PromptKind.DISTRACTOR
    assert parse_distractors('["one", " ", 3, "two "]') == ["one", "two"]
    with pytest.raises(JudgeParseError):
        parse_distractors("nothing")


def test_unknown_prompt_kind():
    assert detect_prompt_kind("Tell me a joke") is None
