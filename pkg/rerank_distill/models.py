"""
Domain types shared by every stage.

All types are frozen dataclasses validated on construction, so an instance
that exists satisfies its invariants and can be shared between tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
from types import MappingProxyType
from typing import TYPE_CHECKING

from .exceptions import ValidationError
from .validation import (
    ensure_unique,
    validate_finite,
    validate_grade,
    validate_identifier,
    validate_range,
    validate_text,
)

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping


class DialogueRole(StrEnum):
    """Speaker of a dialogue turn."""

    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True, slots=True)
class DialogueTurn:
    """One utterance in a multi-turn dialogue."""

    role: DialogueRole
    text: str
    turn_index: int

    def __post_init__(self) -> None:
        """Validate the turn."""
        try:
            object.__setattr__(self, "role", DialogueRole(self.role))
        except ValueError as exc:
            msg = "Dialogue role must be 'user' or 'assistant'"
            raise ValidationError(msg, details={"role": self.role}) from exc
        validate_text(self.text, "turn.text", allow_empty=True)
        if isinstance(self.turn_index, bool) or not isinstance(self.turn_index, int):
            msg = "turn_index must be an integer"
            raise ValidationError(msg, details={"turn_index": self.turn_index})
        if self.turn_index < 0:
            msg = "turn_index cannot be negative"
            raise ValidationError(msg, details={"turn_index": self.turn_index})


def validate_turn_order(turns: Iterable[DialogueTurn], scope: str) -> None:
    """
    Check that turn indexes strictly increase.

    Raises:
        ValidationError: On the first non-increasing index.

    """
    previous = -1
    for turn in turns:
        if turn.turn_index <= previous:
            msg = "turn_index must be strictly increasing"
            raise ValidationError(
                msg,
                details={"scope": scope, "turn_index": turn.turn_index, "previous": previous},
            )
        previous = turn.turn_index


@dataclass(frozen=True, slots=True)
class Query:
    """A retrieval query, optionally carrying its dialogue history."""

    id: str
    text: str
    category: str | None = None
    history: tuple[DialogueTurn, ...] = ()

    def __post_init__(self) -> None:
        """Validate the query."""
        validate_identifier(self.id, "query.id")
        validate_text(self.text, "query.text")
        object.__setattr__(self, "history", tuple(self.history))
        validate_turn_order(self.history, f"query {self.id}")


@dataclass(frozen=True, slots=True)
class Document:
    """A candidate document."""

    id: str
    text: str

    def __post_init__(self) -> None:
        """Validate the document."""
        validate_identifier(self.id, "document.id")
        validate_text(self.text, "document.text", allow_empty=True)


@dataclass(frozen=True, slots=True)
class Candidate:
    """A first-stage retrieval hit."""

    doc_id: str
    sim: float

    def __post_init__(self) -> None:
        """Validate the candidate."""
        validate_identifier(self.doc_id, "candidate.doc_id")
        object.__setattr__(self, "sim", validate_range(self.sim, "candidate.sim", -1.0, 1.0))


@dataclass(frozen=True, slots=True)
class CandidatePool:
    """A query and its first-stage candidates in retrieval order."""

    query_id: str
    candidates: tuple[Candidate, ...]

    def __post_init__(self) -> None:
        """Validate the pool."""
        validate_identifier(self.query_id, "pool.query_id")
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            msg = "Candidate pool must not be empty"
            raise ValidationError(msg, details={"query_id": self.query_id})
        ensure_unique(self.doc_ids, "doc_id", f"pool {self.query_id}")

    @property
    def doc_ids(self) -> list[str]:
        """Return candidate ids in pool order."""
        return [candidate.doc_id for candidate in self.candidates]

    def similarity(self, doc_id: str) -> float:
        """Return the retrieval similarity of ``doc_id``."""
        for candidate in self.candidates:
            if candidate.doc_id == doc_id:
                return candidate.sim
        msg = "Document is not part of the candidate pool"
        raise ValidationError(msg, details={"query_id": self.query_id, "doc_id": doc_id})


@dataclass(frozen=True, slots=True)
class PairwisePreference:
    """An aggregated "winner preferred over loser" observation."""

    query_id: str
    winner: str
    loser: str
    weight: float = 1.0

    def __post_init__(self) -> None:
        """Validate the preference."""
        validate_identifier(self.query_id, "preference.query_id")
        validate_identifier(self.winner, "preference.winner")
        validate_identifier(self.loser, "preference.loser")
        if self.winner == self.loser:
            msg = "Preference winner and loser must differ"
            raise ValidationError(msg, details={"doc_id": self.winner})
        weight = validate_finite(self.weight, "preference.weight")
        if weight <= 0:
            msg = "Preference weight must be positive"
            raise ValidationError(msg, details={"weight": weight})
        object.__setattr__(self, "weight", weight)


class Qrels:
    """
    Immutable relevance judgments.

    Absent (query, document) pairs have grade 0.
    """

    __slots__ = ("_by_query",)

    def __init__(self, grades: Mapping[tuple[str, str], int]) -> None:
        """
        Build the judgment table.

        Args:
            grades: Mapping of (query_id, doc_id) to nonnegative integer grade.

        """
        by_query: dict[str, dict[str, int]] = {}
        for (query_id, doc_id), grade in grades.items():
            validate_identifier(query_id, "qrels.query_id")
            validate_identifier(doc_id, "qrels.doc_id")
            by_query.setdefault(query_id, {})[doc_id] = validate_grade(grade)
        self._by_query = MappingProxyType(
            {qid: MappingProxyType(docs) for qid, docs in by_query.items()}
        )

    def grade(self, query_id: str, doc_id: str) -> int:
        """Return the grade of a pair, 0 when unjudged."""
        return self._by_query.get(query_id, {}).get(doc_id, 0)

    def for_query(self, query_id: str) -> Mapping[str, int]:
        """Return the judged documents of one query."""
        return self._by_query.get(query_id, MappingProxyType({}))

    def relevant(self, query_id: str) -> set[str]:
        """Return documents with a positive grade."""
        return {doc for doc, grade in self.for_query(query_id).items() if grade > 0}

    def query_ids(self) -> list[str]:
        """Return judged query ids in sorted order."""
        return sorted(self._by_query)

    def __contains__(self, query_id: object) -> bool:
        """Return whether ``query_id`` has any judgment."""
        return query_id in self._by_query

    def __len__(self) -> int:
        """Return the number of judged queries."""
        return len(self._by_query)


def ranking_key(item: tuple[str, float]) -> tuple[float, str]:
    """Sort key implementing (score descending, doc_id ascending)."""
    doc_id, score = item
    return (-score, doc_id)


@dataclass(frozen=True, slots=True)
class RunRanking:
    """Scored documents for one query as produced by a ranker."""

    query_id: str
    scored: tuple[tuple[str, float], ...]
    _order: tuple[str, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        """Validate and derive the ranking order."""
        validate_identifier(self.query_id, "run.query_id")
        scored = tuple(
            (validate_identifier(doc_id, "run.doc_id"), validate_finite(score, "run.score"))
            for doc_id, score in self.scored
        )
        ensure_unique([doc_id for doc_id, _ in scored], "doc_id", f"run {self.query_id}")
        ordered = sorted(scored, key=ranking_key)
        object.__setattr__(self, "scored", tuple(ordered))
        object.__setattr__(self, "_order", tuple(doc_id for doc_id, _ in ordered))

    @property
    def ranked_ids(self) -> tuple[str, ...]:
        """Return doc ids in rank order."""
        return self._order

    def __len__(self) -> int:
        """Return the number of ranked documents."""
        return len(self._order)


@dataclass(frozen=True, slots=True)
class Dialogue:
    """A multi-turn conversation used for training-example construction."""

    dialogue_id: str
    turns: tuple[DialogueTurn, ...]
    category: str | None = None

    def __post_init__(self) -> None:
        """Validate the dialogue."""
        validate_identifier(self.dialogue_id, "dialogue.dialogue_id")
        object.__setattr__(self, "turns", tuple(self.turns))
        validate_turn_order(self.turns, f"dialogue {self.dialogue_id}")


class InstructionCategory(StrEnum):
    """Kinds of retrieval instruction attached to a training example."""

    INTENT_FOCUSING = "intent_focusing"
    ENTITY_AUGMENTATION = "entity_augmentation"
    ASPECT_CONSTRAINT = "aspect_constraint"
