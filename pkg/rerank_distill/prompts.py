"""
Prompt templates sent to teacher judges and parsers for their answers.

The listwise ranking template is fixed text that teacher answers are tuned
to; the pairwise, distillation, instruction and distractor templates follow
the same shape.
"""

from __future__ import annotations

import json
import re
from enum import StrEnum
from typing import TYPE_CHECKING

from .exceptions import JudgeParseError, ValidationError
from .models import InstructionCategory

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .models import DialogueTurn, Document, Query


class PromptKind(StrEnum):
    """Templates the pipeline sends."""

    RANKING = "ranking"
    PAIRWISE = "pairwise"
    DISTILLATION = "distillation"
    INSTRUCTION = "instruction"
    DISTRACTOR = "distractor"


RANKING_HEADER = "You are a document relevance ranking expert."
PAIRWISE_HEADER = "You are a document relevance judge."
DISTILLATION_HEADER = "You compress dialogue history for a memory retriever."
INSTRUCTION_HEADER = "You write retrieval instructions for a reranker."
DISTRACTOR_HEADER = "You write distractor passages for reranker training."

RANKING_TEMPLATE = """\
You are a document relevance ranking expert. Given a query
and a set of documents, rank the document IDs by relevance
to the query from highest to lowest.

Query: {query}

Document list:
{doc_list}

Output the ranked document IDs as a JSON array,
e.g. [3, 0, 2, 1, ...].
Output only the JSON array, nothing else."""

PAIRWISE_TEMPLATE = """\
You are a document relevance judge. Given a query and two
documents, decide which document is more relevant to the query.

Query: {query}

Document A:
{doc_a}

Document B:
{doc_b}

Output only the letter A or B, nothing else."""

DISTILLATION_TEMPLATE = """\
You compress dialogue history for a memory retriever.
Summarize the prior turns into core entities and conclusions only.
Drop greetings, filler and repeated content.
Use at most {budget} words.

Dialogue:
{turns}

Output only the summary."""

INSTRUCTION_TEMPLATE = """\
You write retrieval instructions for a reranker.
Choose the category that best describes what the reranker needs:
- intent_focusing: the query is short and depends on the dialogue history
- entity_augmentation: the query and the document use different vocabulary
- aspect_constraint: the query has several needs and the document covers one

History: {history}

Query: {query}

Document: {document}

Output a JSON object {{"category": ..., "text": ...}}, nothing else."""

DISTRACTOR_TEMPLATE = """\
You write distractor passages for reranker training.
Write {count} short passages that share topic and vocabulary with the
query but do not contain its answer.

Query: {query}

Answer: {answer}

Output the passages as a JSON array of strings, nothing else."""

_HEADERS = {
    RANKING_HEADER: PromptKind.RANKING,
    PAIRWISE_HEADER: PromptKind.PAIRWISE,
    DISTILLATION_HEADER: PromptKind.DISTILLATION,
    INSTRUCTION_HEADER: PromptKind.INSTRUCTION,
    DISTRACTOR_HEADER: PromptKind.DISTRACTOR,
}

_INT_ARRAY = re.compile(r"\[\s*-?\d+(?:\s*,\s*-?\d+)*\s*\]")
_JSON_ARRAY = re.compile(r"\[.*\]", re.DOTALL)
_JSON_OBJECT = re.compile(r"\{.*\}", re.DOTALL)
_CHOICE = re.compile(r"\b([AB])\b")


def detect_prompt_kind(prompt: str) -> PromptKind | None:
    """Return the template a prompt was rendered from, if any."""
    for header, kind in _HEADERS.items():
        if prompt.startswith(header):
            return kind
    return None


def flatten(text: str) -> str:
    """Collapse whitespace runs so a text fits on one prompt line."""
    return " ".join(text.split())


def render_ranking_prompt(query: Query, docs: Sequence[Document]) -> str:
    """
    Render the listwise ranking prompt.

    Documents are listed one per line as ``[index] text`` with display indexes
    0..n-1 in the given order; line breaks inside a text are collapsed.

    Raises:
        ValidationError: If ``docs`` is empty.

    """
    if not docs:
        msg = "A ranking prompt needs at least one document"
        raise ValidationError(msg)
    doc_list = "\n".join(f"[{index}] {flatten(doc.text)}" for index, doc in enumerate(docs))
    return RANKING_TEMPLATE.format(query=flatten(query.text), doc_list=doc_list)


def render_pairwise_prompt(query: Query, doc_a: Document, doc_b: Document) -> str:
    """Render the two-document comparison prompt."""
    return PAIRWISE_TEMPLATE.format(
        query=flatten(query.text), doc_a=flatten(doc_a.text), doc_b=flatten(doc_b.text)
    )


def render_distillation_prompt(turns: Sequence[DialogueTurn], budget: int) -> str:
    """Render the history distillation prompt, one ``role: text`` line per turn."""
    lines = "\n".join(f"{turn.role}: {flatten(turn.text)}" for turn in turns)
    return DISTILLATION_TEMPLATE.format(budget=budget, turns=lines)


def render_instruction_prompt(query: Query, document: Document, history: str) -> str:
    """Render the instruction generation prompt."""
    return INSTRUCTION_TEMPLATE.format(
        history=flatten(history) or "(none)",
        query=flatten(query.text),
        document=flatten(document.text),
    )


def render_distractor_prompt(query: Query, answer: Document, count: int) -> str:
    """Render the distractor generation prompt."""
    return DISTRACTOR_TEMPLATE.format(
        count=count, query=flatten(query.text), answer=flatten(answer.text)
    )


def parse_listwise_ranking(text: str, n: int) -> tuple[int, ...]:
    """
    Extract a ranking permutation of ``0..n-1`` from a teacher answer.

    The first JSON array of integers in ``text`` is used; prose around it is
    ignored.

    Args:
        text: Raw teacher response.
        n: Number of documents that were shown.

    Returns:
        Display indexes from most to least relevant.

    Raises:
        JudgeParseError: With reason ``no_array``, ``out_of_range``,
            ``duplicate`` or ``missing``.

    """
    if n < 1:
        msg = "n must be at least 1"
        raise ValidationError(msg)

    match = _INT_ARRAY.search(text)
    if match is None:
        msg = "No JSON integer array in teacher response"
        raise JudgeParseError(msg, reason="no_array", details={"excerpt": text[:80]})

    indexes = [int(value) for value in json.loads(match.group(0))]
    out_of_range = [index for index in indexes if not 0 <= index < n]
    if out_of_range:
        msg = "Ranking index out of range"
        raise JudgeParseError(
            msg, reason="out_of_range", details={"indexes": out_of_range, "n": n}
        )
    if len(set(indexes)) != len(indexes):
        msg = "Ranking repeats an index"
        raise JudgeParseError(msg, reason="duplicate", details={"ranking": indexes})
    missing = sorted(set(range(n)) - set(indexes))
    if missing:
        msg = "Ranking omits indexes"
        raise JudgeParseError(msg, reason="missing", details={"missing": missing})
    return tuple(indexes)


def parse_pairwise_choice(text: str) -> str:
    """
    Return ``"A"`` or ``"B"`` from a pairwise answer.

    Raises:
        JudgeParseError: With reason ``no_choice``.

    """
    match = _CHOICE.search(text)
    if match is None:
        msg = "No A/B choice in teacher response"
        raise JudgeParseError(msg, reason="no_choice", details={"excerpt": text[:80]})
    return match.group(1)


def parse_instruction(text: str) -> tuple[InstructionCategory, str]:
    """
    Return the category and text of a generated instruction.

    Raises:
        JudgeParseError: With reason ``no_object`` or ``invalid_category``.

    """
    match = _JSON_OBJECT.search(text)
    try:
        obj = json.loads(match.group(0)) if match else None
    except json.JSONDecodeError:
        obj = None
    if not isinstance(obj, dict) or not isinstance(obj.get("text"), str):
        msg = "No instruction object in teacher response"
        raise JudgeParseError(msg, reason="no_object", details={"excerpt": text[:80]})

    try:
        category = InstructionCategory(obj.get("category"))
    except ValueError as exc:
        msg = "Unknown instruction category"
        raise JudgeParseError(
            msg, reason="invalid_category", details={"category": obj.get("category")}
        ) from exc
    return category, obj["text"].strip()


def parse_distractors(text: str) -> list[str]:
    """
    Return the distractor passages from a JSON array of strings.

    Raises:
        JudgeParseError: With reason ``no_array``.

    """
    match = _JSON_ARRAY.search(text)
    try:
        items = json.loads(match.group(0)) if match else None
    except json.JSONDecodeError:
        items = None
    if not isinstance(items, list):
        msg = "No JSON string array in teacher response"
        raise JudgeParseError(msg, reason="no_array", details={"excerpt": text[:80]})
    return [item.strip() for item in items if isinstance(item, str) and item.strip()]
