"""
Multi-turn memory training data.

For every user turn answered by the assistant, the preceding turns are
distilled into a short summary, the answer becomes the positive document,
teacher-written distractors are filtered into hard and easy negatives, and a
categorized retrieval instruction is attached. Optionally the example's own
mini-pool is judged and fitted to give every document a soft label.
"""

from __future__ import annotations

import asyncio
import logging
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Protocol

import numpy as np

from .const import DEFAULT_N_NEG, DEFAULT_SEED, DEFAULT_TOKEN_BUDGET
from .context_logger import ContextLogger, log_performance
from .elo_fit import BTFitConfig, fit_bradley_terry, normalize_scores
from .exceptions import (
    DataError,
    IncompleteExampleError,
    JudgeParseError,
    ValidationError,
)
from .models import (
    Candidate,
    CandidatePool,
    DialogueRole,
    Document,
    InstructionCategory,
    Query,
)
from .negative_filter import (
    Bucket,
    FilterConfig,
    FilterGroup,
    NegativeCandidate,
    filter_query,
)
from .prompts import (
    flatten,
    parse_distractors,
    parse_instruction,
    render_distillation_prompt,
    render_distractor_prompt,
    render_instruction_prompt,
)
from .records import encode_document, round_float
from .teacher_client import select_endpoint

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from .judge_orchestrator import JudgeOrchestrator
    from .models import Dialogue, DialogueTurn
    from .teacher_client import Teacher

_LOGGER = logging.getLogger(__name__)

_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")
_WORD = re.compile(r"[a-z0-9]+")

DISTRACTOR_FACTOR = 2
INSTRUCTION_ATTEMPTS = 2


class SimilaritySource(Protocol):
    """Scores a document against a query on [-1, 1]."""

    def __call__(self, query: str, document: str) -> float:
        """Return the similarity of ``document`` to ``query``."""


def lexical_cosine(query: str, document: str) -> float:
    """Cosine similarity of lowercase term-count vectors."""
    query_counts = Counter(_WORD.findall(query.lower()))
    doc_counts = Counter(_WORD.findall(document.lower()))
    vocabulary = sorted(query_counts.keys() | doc_counts.keys())
    if not query_counts or not doc_counts:
        return 0.0
    a = np.array([query_counts[term] for term in vocabulary], dtype=float)
    b = np.array([doc_counts[term] for term in vocabulary], dtype=float)
    return float(np.clip(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0))


def word_count(text: str) -> int:
    """Whitespace-token count used for the history budget."""
    return len(text.split())


@dataclass(frozen=True, slots=True)
class DistilledHistory:
    """Compressed prior turns of a dialogue."""

    source_turn_count: int
    summary: str
    token_budget: int

    def __post_init__(self) -> None:
        """Check the summary fits the budget."""
        if self.token_budget < 1:
            msg = "token_budget must be positive"
            raise ValidationError(msg, details={"token_budget": self.token_budget})
        if word_count(self.summary) > self.token_budget:
            msg = "Distilled history exceeds its token budget"
            raise ValidationError(
                msg,
                details={"words": word_count(self.summary), "token_budget": self.token_budget},
            )


@dataclass(frozen=True, slots=True)
class Instruction:
    """A categorized retrieval instruction."""

    category: InstructionCategory
    text: str

    def __post_init__(self) -> None:
        """Validate the category."""
        try:
            object.__setattr__(self, "category", InstructionCategory(self.category))
        except ValueError as exc:
            msg = "Unknown instruction category"
            raise ValidationError(msg, details={"category": self.category}) from exc

    def to_record(self) -> dict[str, str]:
        """Encode as ``{"category", "text"}``."""
        return {"category": str(self.category), "text": self.text}


@dataclass(frozen=True, slots=True)
class TrainingExample:
    """One multi-turn training example."""

    query: Query
    distilled_history: DistilledHistory
    positive: Document
    hard_negatives: tuple[Document, ...] = ()
    easy_negatives: tuple[Document, ...] = ()
    instruction: Instruction | None = None
    soft_labels: Mapping[str, float] | None = None

    def __post_init__(self) -> None:
        """Validate the negatives and soft labels."""
        object.__setattr__(self, "hard_negatives", tuple(self.hard_negatives))
        object.__setattr__(self, "easy_negatives", tuple(self.easy_negatives))
        self.validate()

    @property
    def negatives(self) -> tuple[Document, ...]:
        """Return hard then easy negatives."""
        return self.hard_negatives + self.easy_negatives

    def validate(self) -> None:
        """
        Check the example invariants.

        Raises:
            ValidationError: If the positive appears among the negatives, a
                negative repeats, or a soft label is outside [0, 1].

        """
        ids = [doc.id for doc in self.negatives]
        texts = [flatten(doc.text).lower() for doc in self.negatives]
        if self.positive.id in ids or flatten(self.positive.text).lower() in texts:
            msg = "Positive document appears among the negatives"
            raise ValidationError(msg, details={"query_id": self.query.id})
        if len(set(ids)) != len(ids) or len(set(texts)) != len(texts):
            msg = "Negatives must be pairwise distinct"
            raise ValidationError(msg, details={"query_id": self.query.id})
        for doc_id, label in (self.soft_labels or {}).items():
            if not 0.0 <= label <= 1.0:
                msg = "Soft label outside [0, 1]"
                raise ValidationError(msg, details={"doc_id": doc_id, "label": label})

    def to_record(self) -> dict[str, Any]:
        """Encode for the training-examples artifact."""
        record: dict[str, Any] = {
            "query_id": self.query.id,
            "query": self.query.text,
            "history_summary": self.distilled_history.summary,
        }
        if self.query.category is not None:
            record["category"] = self.query.category
        if self.instruction is not None:
            record["instruction"] = self.instruction.to_record()
        record["positive"] = encode_document(self.positive)
        record["hard_negatives"] = [encode_document(doc) for doc in self.hard_negatives]
        record["easy_negatives"] = [encode_document(doc) for doc in self.easy_negatives]
        if self.soft_labels is not None:
            record["soft_labels"] = {
                doc_id: round_float(label) for doc_id, label in sorted(self.soft_labels.items())
            }
        return record


@dataclass(frozen=True, slots=True)
class NegativeSet:
    """Filtered negatives of one example."""

    hard: tuple[Document, ...]
    easy: tuple[Document, ...]
    requested: int


@dataclass(frozen=True, slots=True)
class DialogueConfig:
    """Settings of the dialogue stage."""

    token_budget: int = DEFAULT_TOKEN_BUDGET
    n_neg: int = DEFAULT_N_NEG
    soft_labels: bool = False
    instructions: bool = True
    seed: int = DEFAULT_SEED
    filter: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.token_budget < 1 or self.n_neg < 1:
            msg = "token_budget and n_neg must be positive"
            raise ValidationError(
                msg, details={"token_budget": self.token_budget, "n_neg": self.n_neg}
            )


@dataclass(slots=True)
class DialogueResult:
    """Examples built from one dialogue and the turns that produced none."""

    dialogue_id: str
    examples: list[TrainingExample] = field(default_factory=list)
    incomplete: list[tuple[str, str]] = field(default_factory=list)


def truncate_to_budget(text: str, budget: int) -> str:
    """
    Cut ``text`` at the last sentence boundary within ``budget`` words.

    When not even the first sentence fits, the first ``budget`` words are kept.
    """
    if word_count(text) <= budget:
        return text
    kept: list[str] = []
    used = 0
    for sentence in _SENTENCE_END.split(text.strip()):
        words = word_count(sentence)
        if used + words > budget:
            break
        kept.append(sentence)
        used += words
    if kept:
        return " ".join(kept)
    return " ".join(text.split()[:budget])


async def distill_history(
    turns: Sequence[DialogueTurn], client: Teacher, budget: int = DEFAULT_TOKEN_BUDGET
) -> DistilledHistory:
    """
    Summarize prior turns into core entities and conclusions.

    An empty turn list gives an empty summary without asking the teacher.
    An over-budget answer is truncated at a sentence boundary.
    """
    if budget < 1:
        msg = "budget must be positive"
        raise ValidationError(msg, details={"budget": budget})
    if not turns:
        return DistilledHistory(source_turn_count=0, summary="", token_budget=budget)

    prompt = render_distillation_prompt(turns, budget)
    answer = flatten(
        await client.complete(select_endpoint(client.endpoints, 0), prompt, sample_tag="distill")
    )
    summary = truncate_to_budget(answer, budget)
    if summary != answer:
        _LOGGER.warning(
            "Distilled history over budget (%d > %d words), truncated",
            word_count(answer),
            budget,
        )
    return DistilledHistory(source_turn_count=len(turns), summary=summary, token_budget=budget)


def build_positive(dialogue_id: str, turns: Sequence[DialogueTurn]) -> Document:
    """
    Turn the current turn's assistant answer into the positive document.

    The document id is ``"{dialogue_id}:t{turn_index}"`` of the answer turn.

    Raises:
        DataError: If the turns contain no non-empty assistant answer.

    """
    for turn in reversed(turns):
        if turn.role is DialogueRole.ASSISTANT and turn.text.strip():
            return Document(id=f"{dialogue_id}:t{turn.turn_index}", text=turn.text)
    msg = "Current turn has no assistant answer"
    raise DataError(msg, details={"dialogue_id": dialogue_id})


def _distractor_documents(positive: Document, texts: Sequence[str]) -> list[Document]:
    seen = {flatten(positive.text).lower()}
    documents = []
    for text in texts:
        key = flatten(text).lower()
        if not key or key in seen:
            continue
        seen.add(key)
        documents.append(Document(id=f"{positive.id}:n{len(documents)}", text=text))
    return documents


async def generate_hard_negatives(
    query: Query,
    positive: Document,
    client: Teacher,
    n_neg: int = DEFAULT_N_NEG,
    similarity_source: SimilaritySource = lexical_cosine,
    filter_config: FilterConfig | None = None,
) -> NegativeSet:
    """
    Ask the teacher for distractors and keep the ones the gap filter accepts.

    Distractors repeating the positive are discarded before filtering. Hard
    negatives come first, then the sampled easy ones, ``n_neg`` at most.

    Raises:
        IncompleteExampleError: If no negative survives.

    """
    if n_neg < 1:
        msg = "n_neg must be at least 1"
        raise ValidationError(msg, details={"n_neg": n_neg})
    filter_config = replace(filter_config or FilterConfig(), require_verifier=False)

    requested = n_neg * DISTRACTOR_FACTOR
    prompt = render_distractor_prompt(query, positive, requested)
    endpoint = select_endpoint(client.endpoints, 0)
    try:
        texts = parse_distractors(
            await client.complete(endpoint, prompt, sample_tag="distractors")
        )
    except JudgeParseError as exc:
        msg = "Teacher returned no usable distractors"
        raise IncompleteExampleError(msg, details={"query_id": query.id}) from exc

    documents = {doc.id: doc for doc in _distractor_documents(positive, texts)}
    group = FilterGroup(
        query_id=query.id,
        positive_sim=similarity_source(query.text, positive.text),
        candidates=tuple(
            NegativeCandidate(query.id, doc.id, similarity_source(query.text, doc.text))
            for doc in documents.values()
        ),
    )
    result = filter_query(group, filter_config)
    hard = [documents[d.doc_id] for d in result.kept() if d.bucket is not Bucket.EASY_NEGATIVE]
    easy = [documents[d.doc_id] for d in result.kept(Bucket.EASY_NEGATIVE)]
    hard = hard[:n_neg]
    easy = easy[: n_neg - len(hard)]
    if not hard and not easy:
        msg = "No negative survived filtering"
        raise IncompleteExampleError(
            msg, details={"query_id": query.id, "distractors": len(documents)}
        )
    return NegativeSet(hard=tuple(hard), easy=tuple(easy), requested=requested)


async def generate_instruction(
    query: Query, positive: Document, client: Teacher, history: str = ""
) -> Instruction | None:
    """
    Ask the teacher for a categorized instruction.

    An answer with a missing or unknown category is retried once; after that
    the instruction is omitted.
    """
    prompt = render_instruction_prompt(query, positive, history)
    endpoint = select_endpoint(client.endpoints, 0)
    for attempt in range(INSTRUCTION_ATTEMPTS):
        answer = await client.complete(endpoint, prompt, sample_tag=f"instruction;attempt={attempt}")
        try:
            category, text = parse_instruction(answer)
        except JudgeParseError as exc:
            _LOGGER.debug("Instruction attempt %d unusable: %s", attempt, exc.reason)
            continue
        return Instruction(category=category, text=text)
    _LOGGER.warning("Omitting instruction for %s after %d attempts", query.id, INSTRUCTION_ATTEMPTS)
    return None


async def soft_labels_for(
    query: Query,
    documents: Sequence[Document],
    orchestrator: JudgeOrchestrator,
    fit_config: BTFitConfig | None = None,
    similarity_source: SimilaritySource = lexical_cosine,
) -> dict[str, float] | None:
    """
    Judge an example's mini-pool and return calibrated scores per document.

    Returns None when the teacher produced no usable preference.
    """
    pool = CandidatePool(
        query_id=query.id,
        candidates=tuple(
            Candidate(doc.id, similarity_source(query.text, doc.text)) for doc in documents
        ),
    )
    judged = await orchestrator.judge_query(query, pool, {doc.id: doc for doc in documents})
    if not judged.preferences:
        return None
    elos = fit_bradley_terry(judged.preferences, fit_config, doc_ids=pool.doc_ids)
    return {item.doc_id: item.score for item in normalize_scores(elos, fit_config)}


class DialogueBuilder:
    """Builds training examples from dialogues with a teacher."""

    def __init__(
        self,
        client: Teacher,
        config: DialogueConfig | None = None,
        *,
        similarity_source: SimilaritySource = lexical_cosine,
        orchestrator: JudgeOrchestrator | None = None,
        fit_config: BTFitConfig | None = None,
    ) -> None:
        """
        Initialize the builder.

        Args:
            client: Teacher used for every prompt.
            config: Stage settings.
            similarity_source: First-stage similarity used by the gap filter.
            orchestrator: Judge for soft labels; required when they are enabled.
            fit_config: Bradley-Terry settings for soft labels.

        """
        self._client = client
        self._config = config or DialogueConfig()
        self._similarity = similarity_source
        self._orchestrator = orchestrator
        self._fit_config = fit_config
        self._logger = ContextLogger(_LOGGER, "dialogue_builder")
        if self._config.soft_labels and orchestrator is None:
            msg = "Soft labels need a judge orchestrator"
            raise ValidationError(msg)

    async def build_example(
        self, dialogue: Dialogue, position: int
    ) -> TrainingExample:
        """
        Build the example whose current turn is ``turns[position]``.

        ``turns[position]`` is the user turn and ``turns[position + 1]`` its
        assistant answer.

        Raises:
            IncompleteExampleError: If no negative survives filtering.

        """
        turns = dialogue.turns
        user_turn = turns[position]
        prior = turns[:position]
        query = Query(
            id=f"{dialogue.dialogue_id}:q{user_turn.turn_index}",
            text=user_turn.text,
            category=dialogue.category,
            history=prior,
        )
        history = await distill_history(prior, self._client, self._config.token_budget)
        positive = build_positive(dialogue.dialogue_id, turns[position : position + 2])
        negatives = await generate_hard_negatives(
            query,
            positive,
            self._client,
            self._config.n_neg,
            self._similarity,
            replace(self._config.filter, seed=self._config.seed),
        )
        instruction = None
        if self._config.instructions:
            instruction = await generate_instruction(query, positive, self._client, history.summary)

        soft_labels = None
        if self._config.soft_labels and self._orchestrator is not None:
            soft_labels = await soft_labels_for(
                query,
                [positive, *negatives.hard, *negatives.easy],
                self._orchestrator,
                self._fit_config,
                self._similarity,
            )
        return TrainingExample(
            query=query,
            distilled_history=history,
            positive=positive,
            hard_negatives=negatives.hard,
            easy_negatives=negatives.easy,
            instruction=instruction,
            soft_labels=soft_labels,
        )

    async def build_dialogue(self, dialogue: Dialogue) -> DialogueResult:
        """Build examples for every answered user turn, in turn order."""
        logger = self._logger.new_operation("build_dialogue").bind(
            dialogue_id=dialogue.dialogue_id
        )
        result = DialogueResult(dialogue_id=dialogue.dialogue_id)
        turns = dialogue.turns
        for position in range(len(turns) - 1):
            if turns[position].role is not DialogueRole.USER:
                continue
            if turns[position + 1].role is not DialogueRole.ASSISTANT:
                continue
            example_id = f"{dialogue.dialogue_id}:q{turns[position].turn_index}"
            try:
                result.examples.append(await self.build_example(dialogue, position))
            except DataError as exc:
                logger.warning("Example not emitted", example_id=example_id, reason=exc.message)
                result.incomplete.append((example_id, exc.message))
        logger.debug("Dialogue done", examples=len(result.examples))
        return result

    @log_performance()
    async def build_all(
        self, dialogues: Sequence[Dialogue], *, jobs: int = 1
    ) -> list[DialogueResult]:
        """Build every dialogue, ``jobs`` at a time; results keep input order."""
        results: list[DialogueResult] = []
        step = max(1, jobs)
        for start in range(0, len(dialogues), step):
            batch = dialogues[start : start + step]
            results.extend(await asyncio.gather(*(self.build_dialogue(d) for d in batch)))
        self._logger.info(
            "Built training examples",
            dialogues=len(results),
            examples=sum(len(r.examples) for r in results),
            incomplete=sum(len(r.incomplete) for r in results),
        )
        return results


def stage2_records(examples: Sequence[TrainingExample]) -> list[dict[str, Any]]:
    """
    Pointwise (query, document, label) rows.

    Soft labels are used when present; otherwise the positive is labelled
    1.0 and every negative 0.0.
    """
    rows = []
    for example in examples:
        labels = example.soft_labels
        for doc in (example.positive, *example.negatives):
            default = 1.0 if doc.id == example.positive.id else 0.0
            label = labels.get(doc.id, default) if labels is not None else default
            rows.append(
                {
                    "query_id": example.query.id,
                    "query": example.query.text,
                    "doc_id": doc.id,
                    "doc": doc.text,
                    "label": round_float(label),
                }
            )
    return rows


def stage3_records(examples: Sequence[TrainingExample]) -> list[dict[str, Any]]:
    """Listwise ``[query, pos, neg1, ...]`` tuples."""
    return [
        {
            "query_id": example.query.id,
            "query": example.query.text,
            "pos": example.positive.text,
            "negs": [doc.text for doc in example.negatives],
        }
        for example in examples
    ]
