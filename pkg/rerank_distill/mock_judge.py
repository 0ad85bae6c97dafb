"""
Deterministic offline teacher.

:func:`mock_judge` answers every pipeline prompt from a token-overlap
heuristic, breaking ties with a seeded hash, so a whole pipeline run can be
replayed without network access. :class:`MockTeacher` plugs it in wherever a
:class:`~rerank_distill.teacher_client.TeacherClient` is expected.
"""

from __future__ import annotations

import json
import re
from typing import TYPE_CHECKING

from .exceptions import UnknownTemplateError
from .models import InstructionCategory
from .prompts import PromptKind, detect_prompt_kind
from .seeding import derive_seed, derived_rng
from .teacher_client import TeacherEndpoint

if TYPE_CHECKING:
    from collections.abc import Sequence

MOCK_ENDPOINT = TeacherEndpoint(base_url="mock://teacher", model_name="mock-judge")

_TOKEN = re.compile(r"[a-z0-9]+")
_CAPITALIZED = re.compile(r"\b[A-Z][A-Za-z0-9'-]*[A-Za-z0-9]\b|\b[A-Z]\b")
_NUMERIC = re.compile(r"(?<![A-Za-z0-9])[$€£]?\d[\d.,]*(?:%|k|K|m|M)?")
_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")

_COMMON_WORDS = frozenset(
    {
        "A", "An", "And", "Are", "But", "Can", "Could", "Did", "Do", "Does",
        "For", "He", "Hello", "Hi", "How", "I", "If", "In", "Is", "It", "Let",
        "My", "No", "Of", "Ok", "Okay", "On", "Our", "Please", "She", "Should",
        "So", "Sure", "Thanks", "That", "The", "There", "They", "This", "To",
        "We", "What", "When", "Where", "Which", "Who", "Why", "Will", "With",
        "Would", "Yes", "You", "Your",
    }
)
_MULTI_NEED = re.compile(r"\b(and also|as well as|also|plus|both)\b|\band\b.*\?|,.*\?|\?.*\?")

_FILLER = (
    "The weekly newsletter covered gardening tips and a recipe for lemon bread.",
    "Traffic on the northern bridge was heavy during the morning commute.",
    "A local museum extended its opening hours for the summer exhibition.",
    "The printer on the second floor needs a new toner cartridge.",
    "Several volunteers helped clean the riverside park on Saturday.",
    "The library added a quiet study room next to the children's section.",
)

_RANKING_BLOCK = re.compile(
    r"\nQuery: (?P<query>.*?)\n\nDocument list:\n(?P<docs>.*)\n\nOutput the ranked",
    re.DOTALL,
)
_DOC_LINE = re.compile(r"(?m)^\[(\d+)\] ")
_PAIRWISE_BLOCK = re.compile(
    r"\nQuery: (?P<query>.*?)\n\nDocument A:\n(?P<a>.*?)\n\nDocument B:\n(?P<b>.*?)\n\nOutput only",
    re.DOTALL,
)
_DISTILLATION_BLOCK = re.compile(
    r"Use at most (?P<budget>\d+) words\.\n\nDialogue:\n(?P<turns>.*?)\n\nOutput only",
    re.DOTALL,
)
_INSTRUCTION_BLOCK = re.compile(
    r"\nHistory: (?P<history>.*?)\n\nQuery: (?P<query>.*?)\n\nDocument: (?P<document>.*?)\n\nOutput a JSON",
    re.DOTALL,
)
_DISTRACTOR_BLOCK = re.compile(
    r"Write (?P<count>\d+) short passages.*?\nQuery: (?P<query>.*?)\n\nAnswer: (?P<answer>.*?)\n\nOutput the",
    re.DOTALL,
)


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens of ``text``."""
    return _TOKEN.findall(text.lower())


def overlap_score(query: str, document: str) -> float:
    """
    Score how well ``document`` covers ``query``.

    The score is the share of distinct query tokens present in the document,
    plus one when the document contains the whole query text verbatim.
    """
    query_tokens = set(tokenize(query))
    if not query_tokens:
        return 0.0
    score = len(query_tokens & set(tokenize(document))) / len(query_tokens)
    if " ".join(query.lower().split()) in " ".join(document.lower().split()):
        score += 1.0
    return score


def extract_entities(text: str) -> list[str]:
    """
    Return the entities the mock marks in ``text``, in first-seen order.

    Entities are capitalized words other than common sentence openers, and
    numeric expressions such as ``40k`` or ``$1,200``.
    """
    found: list[tuple[int, str]] = []
    for match in _CAPITALIZED.finditer(text):
        if match.group(0) not in _COMMON_WORDS:
            found.append((match.start(), match.group(0)))
    for match in _NUMERIC.finditer(text):
        value = match.group(0).rstrip(".,")
        if value:
            found.append((match.start(), value))

    entities: list[str] = []
    for _, value in sorted(found):
        if value not in entities:
            entities.append(value)
    return entities


def _match(pattern: re.Pattern[str], prompt: str, kind: PromptKind) -> re.Match[str]:
    match = pattern.search(prompt)
    if match is None:
        msg = f"Prompt does not follow the {kind} template"
        raise UnknownTemplateError(msg, details={"kind": str(kind)})
    return match


def _rank(prompt: str, seed: int) -> str:
    match = _match(_RANKING_BLOCK, prompt, PromptKind.RANKING)
    query = match.group("query")
    pieces = _DOC_LINE.split(match.group("docs"))
    docs = {int(pieces[i]): pieces[i + 1].rstrip("\n") for i in range(1, len(pieces) - 1, 2)}
    order = sorted(
        docs,
        key=lambda index: (
            -overlap_score(query, docs[index]),
            derive_seed(seed, docs[index], index),
        ),
    )
    return json.dumps(order)


def _compare(prompt: str, seed: int) -> str:
    match = _match(_PAIRWISE_BLOCK, prompt, PromptKind.PAIRWISE)
    query, doc_a, doc_b = match.group("query"), match.group("a"), match.group("b")
    score_a, score_b = overlap_score(query, doc_a), overlap_score(query, doc_b)
    if score_a != score_b:
        return "A" if score_a > score_b else "B"
    return "A" if derive_seed(seed, doc_a) >= derive_seed(seed, doc_b) else "B"


def _truncate_words(text: str, budget: int) -> str:
    words = text.split()
    return text if len(words) <= budget else " ".join(words[:budget])


def _distill(prompt: str) -> str:
    match = _match(_DISTILLATION_BLOCK, prompt, PromptKind.DISTILLATION)
    budget = int(match.group("budget"))
    lines = match.group("turns").splitlines()
    entities = extract_entities(" ".join(line.partition(": ")[2] for line in lines))

    answers = [line.partition(": ")[2] for line in lines if line.startswith("assistant: ")]
    parts = []
    if entities:
        parts.append(f"Entities: {', '.join(entities)}.")
    if answers and answers[-1]:
        parts.append(f"Conclusion: {_SENTENCE_END.split(answers[-1].strip())[0]}")
    return _truncate_words(" ".join(parts), budget)


def classify_instruction(history: str, query: str) -> InstructionCategory:
    """
    Pick an instruction category from surface features.

    A terse query after a long history needs intent focusing; a query asking
    for several things needs an aspect constraint; anything else gets entity
    augmentation.
    """
    history_words = len(history.split()) if history != "(none)" else 0
    query_words = len(query.split())
    if query_words <= 8 and history_words >= 3 * query_words:  # noqa: PLR2004
        return InstructionCategory.INTENT_FOCUSING
    if _MULTI_NEED.search(query.lower()):
        return InstructionCategory.ASPECT_CONSTRAINT
    return InstructionCategory.ENTITY_AUGMENTATION


def _instruct(prompt: str) -> str:
    match = _match(_INSTRUCTION_BLOCK, prompt, PromptKind.INSTRUCTION)
    history, query, document = match.group("history"), match.group("query"), match.group("document")
    category = classify_instruction(history, query)

    if category is InstructionCategory.INTENT_FOCUSING:
        context = ", ".join(extract_entities(history)[:5]) or "the preceding conversation"
        text = f"Interpret the query in the context of {context}."
    elif category is InstructionCategory.ASPECT_CONSTRAINT:
        text = "Reward documents that answer any one of the requested aspects, ranking fuller coverage higher."
    else:
        terms = extract_entities(document)[:5] or tokenize(document)[:5]
        text = f"Treat the query as asking about {', '.join(terms)}."
    return json.dumps({"category": str(category), "text": text})


def _distractors(prompt: str, seed: int) -> str:
    match = _match(_DISTRACTOR_BLOCK, prompt, PromptKind.DISTRACTOR)
    count = int(match.group("count"))
    query_tokens = tokenize(match.group("query"))
    answer_tokens = [
        token for token in tokenize(match.group("answer")) if not token[0].isdigit()
    ]
    rng = derived_rng(seed, match.group("query"), match.group("answer"))

    passages: list[str] = []
    for index in range(count):
        if index % 2 == 1:
            passages.append(_FILLER[rng.randrange(len(_FILLER))])
            continue
        pool = sorted(set(query_tokens + answer_tokens))
        words = rng.sample(pool, k=min(len(pool), 4))
        passages.append(
            f"Earlier notes mention {' '.join(words)} but nothing was decided yet."
        )
    return json.dumps(passages)


def mock_judge(prompt: str, seed: int) -> str:
    """
    Answer a pipeline prompt deterministically.

    Args:
        prompt: A prompt rendered from one of the pipeline templates.
        seed: 64-bit seed for tie-breaks and sampling.

    Returns:
        A syntactically valid answer for the template.

    Raises:
        UnknownTemplateError: If the prompt matches no template.

    """
    kind = detect_prompt_kind(prompt)
    if kind is PromptKind.RANKING:
        return _rank(prompt, seed)
    if kind is PromptKind.PAIRWISE:
        return _compare(prompt, seed)
    if kind is PromptKind.DISTILLATION:
        return _distill(prompt)
    if kind is PromptKind.INSTRUCTION:
        return _instruct(prompt)
    if kind is PromptKind.DISTRACTOR:
        return _distractors(prompt, seed)
    msg = "Unrecognized prompt template"
    raise UnknownTemplateError(msg, details={"excerpt": prompt[:80]})


class MockTeacher:
    """Drop-in teacher answering through :func:`mock_judge`."""

    def __init__(
        self, seed: int, endpoints: Sequence[TeacherEndpoint] | None = None
    ) -> None:
        """Initialize with the run seed and optional endpoint labels."""
        self.seed = seed
        self._endpoints = tuple(endpoints or (MOCK_ENDPOINT,))
        self.calls = 0

    @property
    def endpoints(self) -> tuple[TeacherEndpoint, ...]:
        """Return the endpoint labels votes rotate across."""
        return self._endpoints

    async def complete(
        self, endpoint: TeacherEndpoint, prompt: str, *, sample_tag: str = ""
    ) -> str:
        """Answer ``prompt`` with a seed derived from the run seed and sample."""
        self.calls += 1
        seed = derive_seed(self.seed, endpoint.model_name, sample_tag)
        return mock_judge(prompt, seed)
