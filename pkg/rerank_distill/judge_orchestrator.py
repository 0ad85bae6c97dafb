"""
Teacher judging: pair scheduling, vote collection and majority aggregation.

Each query is judged by ``votes`` independent teacher calls. In pairwise mode
every scheduled pair is shown once per vote, alternating the presentation
order; in listwise mode the whole pool is ranked per vote (forward and
reversed display order) and the ranking is decomposed into pairs. Votes for
the same pair are folded by :func:`majority_vote` into weighted
:class:`~rerank_distill.models.PairwisePreference` records.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .const import (
    DEFAULT_PARSE_RETRIES,
    DEFAULT_ROUND_ROBIN_MAX,
    DEFAULT_SAMPLED_K,
    DEFAULT_VOTES,
    DEFAULT_VOTING_TEMPERATURE,
    JUDGE_MODE_LISTWISE,
    JUDGE_MODE_PAIRWISE,
)
from .context_logger import ContextLogger, log_performance
from .exceptions import DataError, JudgeParseError, ValidationError
from .models import PairwisePreference
from .prompts import (
    parse_listwise_ranking,
    parse_pairwise_choice,
    render_pairwise_prompt,
    render_ranking_prompt,
)
from .records import RecordKind, dumps_record, read_jsonl
from .seeding import derived_rng
from .teacher_client import select_endpoint
from .validation import ensure_unique

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping, Sequence

    from .models import CandidatePool, Document, Query
    from .teacher_client import Teacher, TeacherEndpoint

_LOGGER = logging.getLogger(__name__)


class StrategyKind(StrEnum):
    """Pair selection policies."""

    ROUND_ROBIN = "round_robin"
    SAMPLED = "sampled"


class PresentationOrder(StrEnum):
    """Display order of a pair (or of a listwise pool) in the prompt."""

    IJ = "ij"
    JI = "ji"


@dataclass(frozen=True, slots=True)
class PairStrategy:
    """A pair selection policy; ``k`` is the per-document quota when sampled."""

    kind: StrategyKind = StrategyKind.ROUND_ROBIN
    k: int = DEFAULT_SAMPLED_K

    def __post_init__(self) -> None:
        """Validate the strategy."""
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.kind is StrategyKind.SAMPLED and self.k < 1:
            msg = "Sampled strategy needs k >= 1"
            raise ValidationError(msg, details={"k": self.k})

    @classmethod
    def for_pool_size(
        cls,
        n: int,
        round_robin_max: int = DEFAULT_ROUND_ROBIN_MAX,
        sampled_k: int = DEFAULT_SAMPLED_K,
    ) -> PairStrategy:
        """Round-robin for small pools, sampled above ``round_robin_max``."""
        if n <= round_robin_max:
            return cls(StrategyKind.ROUND_ROBIN)
        return cls(StrategyKind.SAMPLED, sampled_k)


@dataclass(frozen=True, slots=True)
class PairSchedule:
    """Pairs of one query to be judged, in deterministic order."""

    query_id: str
    pairs: tuple[tuple[str, str], ...]
    strategy: PairStrategy


@dataclass(frozen=True, slots=True)
class RawJudgment:
    """
    One parsed teacher vote.

    Exactly one of ``winner`` (pairwise) and ``permutation`` (listwise, doc
    ids from most to least relevant) is set.
    """

    query_id: str
    judge: str
    vote_index: int
    presentation_order: PresentationOrder
    attempt: int = 0
    pair: tuple[str, str] | None = None
    winner: str | None = None
    permutation: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        """Validate the payload."""
        object.__setattr__(self, "presentation_order", PresentationOrder(self.presentation_order))
        if (self.winner is None) == (self.permutation is None):
            msg = "A judgment carries either a winner or a permutation"
            raise ValidationError(msg, details={"query_id": self.query_id})
        if self.winner is not None:
            if self.pair is None or self.winner not in self.pair:
                msg = "Pairwise winner must belong to the judged pair"
                raise ValidationError(msg, details={"pair": self.pair, "winner": self.winner})
            object.__setattr__(self, "pair", tuple(self.pair))
        else:
            permutation = tuple(self.permutation or ())
            if len(set(permutation)) != len(permutation):
                msg = "Permutation repeats a document"
                raise ValidationError(msg, details={"query_id": self.query_id})
            object.__setattr__(self, "permutation", permutation)

    def to_record(self) -> dict[str, Any]:
        """Encode for the judgment log."""
        record: dict[str, Any] = {
            "query_id": self.query_id,
            "judge": self.judge,
            "vote_index": self.vote_index,
            "attempt": self.attempt,
            "presentation_order": str(self.presentation_order),
        }
        if self.winner is not None:
            record["pair"] = list(self.pair or ())
            record["payload"] = {"winner": self.winner}
        else:
            record["payload"] = {"permutation": list(self.permutation or ())}
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> RawJudgment:
        """Decode a judgment log record."""
        payload = record["payload"]
        pair = record.get("pair")
        permutation = payload.get("permutation")
        return cls(
            query_id=record["query_id"],
            judge=record["judge"],
            vote_index=record["vote_index"],
            attempt=record.get("attempt", 0),
            presentation_order=record["presentation_order"],
            pair=tuple(pair) if pair else None,
            winner=payload.get("winner"),
            permutation=tuple(permutation) if permutation is not None else None,
        )


@dataclass(frozen=True, slots=True)
class PairVote:
    """One vote's verdict on an unordered pair (stored sorted)."""

    query_id: str
    pair: tuple[str, str]
    vote_index: int
    winner: str


@dataclass(frozen=True, slots=True)
class Unresolved:
    """A pair whose votes produced no verdict."""

    query_id: str
    pair: tuple[str, str]
    reason: str


@dataclass(frozen=True, slots=True)
class JudgeConfig:
    """Settings for one judging run."""

    mode: str = JUDGE_MODE_PAIRWISE
    votes: int = DEFAULT_VOTES
    parse_retries: int = DEFAULT_PARSE_RETRIES
    vote_temperature: float = DEFAULT_VOTING_TEMPERATURE
    round_robin_max: int = DEFAULT_ROUND_ROBIN_MAX
    sampled_k: int = DEFAULT_SAMPLED_K
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.mode not in (JUDGE_MODE_PAIRWISE, JUDGE_MODE_LISTWISE):
            msg = f"Unknown judge mode '{self.mode}'"
            raise ValidationError(msg, details={"mode": self.mode})
        if self.votes < 1 or self.parse_retries < 0:
            msg = "votes must be >= 1 and parse_retries >= 0"
            raise ValidationError(
                msg, details={"votes": self.votes, "parse_retries": self.parse_retries}
            )


@dataclass(slots=True)
class QueryJudgment:
    """Everything produced while judging one query."""

    query_id: str
    judgments: list[RawJudgment] = field(default_factory=list)
    preferences: list[PairwisePreference] = field(default_factory=list)
    unresolved: list[Unresolved] = field(default_factory=list)
    dropped_votes: int = 0


def _sorted_pair(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def arrival_key(judgment: RawJudgment) -> tuple[str, tuple[str, str], int]:
    """Deterministic order of judgments: query, pair, vote index."""
    pair = _sorted_pair(*judgment.pair) if judgment.pair else ("", "")
    return (judgment.query_id, pair, judgment.vote_index)


def schedule_pairs(
    pool: CandidatePool, strategy: PairStrategy | None = None, *, seed: int = 0
) -> PairSchedule:
    """
    Choose the document pairs of one query to send to the teacher.

    Round-robin yields every unordered pair. Sampled(k) first links the
    documents along a seeded random path, which keeps the comparison graph
    connected, then adds seeded random partners until every document takes
    part in at least ``k`` pairs (or in every possible pair).

    Args:
        pool: Candidate pool of the query.
        strategy: Selection policy; chosen from the pool size when omitted.
        seed: Run seed; the query id is mixed in.

    Returns:
        Pairs oriented in pool order and sorted by pool position.

    Raises:
        ValidationError: If the pool has fewer than two candidates.

    """
    doc_ids = pool.doc_ids
    n = len(doc_ids)
    if n < 2:  # noqa: PLR2004
        msg = "Pair scheduling needs at least two candidates"
        raise ValidationError(msg, details={"query_id": pool.query_id, "size": n})

    strategy = strategy or PairStrategy.for_pool_size(n)

    if strategy.kind is StrategyKind.ROUND_ROBIN:
        chosen = set(itertools.combinations(range(n), 2))
    else:
        rng = derived_rng(seed, "schedule", pool.query_id)
        order = list(range(n))
        rng.shuffle(order)
        chosen = {tuple(sorted(edge)) for edge in itertools.pairwise(order)}
        degree = [0] * n
        for i, j in chosen:
            degree[i] += 1
            degree[j] += 1
        for i in range(n):
            partners = [j for j in range(n) if j != i and tuple(sorted((i, j))) not in chosen]
            rng.shuffle(partners)
            while degree[i] < strategy.k and partners:
                j = partners.pop()
                chosen.add(tuple(sorted((i, j))))
                degree[i] += 1
                degree[j] += 1

    pairs = tuple((doc_ids[i], doc_ids[j]) for i, j in sorted(chosen))
    return PairSchedule(query_id=pool.query_id, pairs=pairs, strategy=strategy)


def decompose_ranking_to_pairs(
    permutation: Sequence[str], query_id: str
) -> list[PairwisePreference]:
    """
    Turn a ranking into ``n(n-1)/2`` unit-weight preferences.

    Every document beats every document ranked below it.
    """
    return [
        PairwisePreference(query_id=query_id, winner=winner, loser=loser, weight=1.0)
        for winner, loser in itertools.combinations(permutation, 2)
    ]


def majority_vote(
    votes: Sequence[PairVote],
    *,
    query_id: str | None = None,
    pair: tuple[str, str] | None = None,
) -> PairwisePreference | Unresolved:
    """
    Fold the votes on one pair into a preference.

    The document with strictly more supporting votes wins, weighted by its
    number of supporting votes; a single valid vote decides alone with weight
    one. No votes, or a tie, leave the pair unresolved. With no votes the
    pair identity comes from ``query_id`` and ``pair``.

    Raises:
        ValidationError: If the votes concern different pairs.

    """
    if not votes:
        if query_id is None or pair is None:
            msg = "majority_vote without votes needs query_id and pair"
            raise ValidationError(msg)
        return Unresolved(query_id, _sorted_pair(*pair), "no_valid_votes")

    query_id, pair = votes[0].query_id, votes[0].pair
    if any(vote.query_id != query_id or vote.pair != pair for vote in votes):
        msg = "Votes reference different pairs"
        raise ValidationError(
            msg, details={"pairs": sorted({(v.query_id, *v.pair) for v in votes})}
        )

    counts = {doc_id: 0 for doc_id in pair}
    for vote in votes:
        counts[vote.winner] += 1
    first, second = pair
    if counts[first] == counts[second]:
        return Unresolved(query_id, pair, "tie")
    winner, loser = (first, second) if counts[first] > counts[second] else (second, first)
    return PairwisePreference(
        query_id=query_id, winner=winner, loser=loser, weight=float(counts[winner])
    )


def votes_from_judgments(judgments: Iterable[RawJudgment]) -> dict[tuple[str, str], list[PairVote]]:
    """Group the verdicts carried by judgments per unordered pair."""
    grouped: dict[tuple[str, str], list[PairVote]] = defaultdict(list)
    for judgment in judgments:
        if judgment.winner is not None and judgment.pair is not None:
            pair = _sorted_pair(*judgment.pair)
            grouped[pair].append(
                PairVote(judgment.query_id, pair, judgment.vote_index, judgment.winner)
            )
            continue
        for preference in decompose_ranking_to_pairs(judgment.permutation or (), judgment.query_id):
            pair = _sorted_pair(preference.winner, preference.loser)
            grouped[pair].append(
                PairVote(judgment.query_id, pair, judgment.vote_index, preference.winner)
            )
    return grouped


def aggregate_judgments(
    query_id: str,
    judgments: Sequence[RawJudgment],
    expected_pairs: Iterable[tuple[str, str]] = (),
) -> tuple[list[PairwisePreference], list[Unresolved]]:
    """
    Aggregate the votes of one query.

    Judgments are sorted by (pair, vote index) first, so the result does not
    depend on arrival order. Expected pairs that received no vote at all are
    reported as unresolved.
    """
    grouped = votes_from_judgments(sorted(judgments, key=arrival_key))
    for pair in expected_pairs:
        grouped.setdefault(_sorted_pair(*pair), [])

    preferences: list[PairwisePreference] = []
    unresolved: list[Unresolved] = []
    for pair in sorted(grouped):
        result = majority_vote(grouped[pair], query_id=query_id, pair=pair)
        if isinstance(result, Unresolved):
            unresolved.append(result)
        else:
            preferences.append(result)
    return preferences, unresolved


class JudgeOrchestrator:
    """Collects teacher votes for candidate pools and aggregates them."""

    def __init__(self, teacher: Teacher, config: JudgeConfig | None = None) -> None:
        """Initialize with a teacher (live client or mock) and settings."""
        self._teacher = teacher
        self._config = config or JudgeConfig()
        self._logger = ContextLogger(_LOGGER, "judge_orchestrator")

    @property
    def config(self) -> JudgeConfig:
        """Return the judging settings."""
        return self._config

    def _endpoint(self, vote_index: int) -> TeacherEndpoint:
        endpoint = select_endpoint(self._teacher.endpoints, vote_index)
        if self._config.votes > 1:
            return endpoint.with_temperature(self._config.vote_temperature)
        return endpoint

    async def _ask(
        self,
        prompt: str,
        vote_index: int,
        parse: Callable[[str], Any],
        label: str,
    ) -> tuple[Any, int, str] | None:
        """Ask one vote, retrying unparseable answers; None once retries run out."""
        endpoint = self._endpoint(vote_index)
        for attempt in range(self._config.parse_retries + 1):
            text = await self._teacher.complete(
                endpoint, prompt, sample_tag=f"{label};vote={vote_index};attempt={attempt}"
            )
            try:
                return parse(text), attempt, endpoint.model_name
            except JudgeParseError as exc:
                self._logger.debug(
                    "Unparseable teacher answer",
                    label=label,
                    vote=vote_index,
                    attempt=attempt,
                    reason=exc.reason,
                )
        return None

    async def _pair_vote(
        self,
        query: Query,
        docs: Mapping[str, Document],
        pair: tuple[str, str],
        vote_index: int,
    ) -> RawJudgment | None:
        order = PresentationOrder.IJ if vote_index % 2 == 0 else PresentationOrder.JI
        first, second = pair if order is PresentationOrder.IJ else (pair[1], pair[0])
        prompt = render_pairwise_prompt(query, docs[first], docs[second])
        answer = await self._ask(prompt, vote_index, parse_pairwise_choice, "pairwise")
        if answer is None:
            return None
        choice, attempt, judge = answer
        return RawJudgment(
            query_id=query.id,
            judge=judge,
            vote_index=vote_index,
            attempt=attempt,
            presentation_order=order,
            pair=pair,
            winner=first if choice == "A" else second,
        )

    async def _listwise_vote(
        self, query: Query, shown: Sequence[Document], vote_index: int
    ) -> RawJudgment | None:
        order = PresentationOrder.IJ if vote_index % 2 == 0 else PresentationOrder.JI
        display = list(shown) if order is PresentationOrder.IJ else list(reversed(shown))
        prompt = render_ranking_prompt(query, display)
        answer = await self._ask(
            prompt, vote_index, lambda text: parse_listwise_ranking(text, len(display)), "listwise"
        )
        if answer is None:
            return None
        ranking, attempt, judge = answer
        return RawJudgment(
            query_id=query.id,
            judge=judge,
            vote_index=vote_index,
            attempt=attempt,
            presentation_order=order,
            permutation=tuple(display[index].id for index in ranking),
        )

    async def judge_query(
        self, query: Query, pool: CandidatePool, documents: Mapping[str, Document]
    ) -> QueryJudgment:
        """
        Collect and aggregate all votes for one query.

        Raises:
            DataError: If a pooled document has no text.
            TeacherError: If the teacher cannot be reached.

        """
        missing = [doc_id for doc_id in pool.doc_ids if doc_id not in documents]
        if missing:
            msg = "Candidate pool references unknown documents"
            raise DataError(msg, details={"query_id": pool.query_id, "doc_ids": missing[:10]})

        logger = self._logger.new_operation("judge_query").bind(query_id=query.id)
        if len(pool.candidates) < 2:  # noqa: PLR2004
            logger.warning("Pool has a single candidate, nothing to compare")
            return QueryJudgment(query_id=query.id)

        votes = range(self._config.votes)
        if self._config.mode == JUDGE_MODE_PAIRWISE:
            schedule = schedule_pairs(
                pool,
                PairStrategy.for_pool_size(
                    len(pool.candidates), self._config.round_robin_max, self._config.sampled_k
                ),
                seed=self._config.seed,
            )
            expected = schedule.pairs
            tasks = [
                self._pair_vote(query, documents, pair, vote)
                for pair in schedule.pairs
                for vote in votes
            ]
        else:
            shown = [documents[doc_id] for doc_id in pool.doc_ids]
            expected = tuple(itertools.combinations(pool.doc_ids, 2))
            tasks = [self._listwise_vote(query, shown, vote) for vote in votes]

        results = await asyncio.gather(*tasks)
        judgments = [judgment for judgment in results if judgment is not None]
        result = self.aggregate(query.id, judgments, expected)
        result.dropped_votes = len(results) - len(judgments)
        if result.dropped_votes:
            logger.warning("Dropped votes after parse retries", count=result.dropped_votes)
        if result.unresolved:
            logger.warning("Unresolved pairs excluded from fitting", count=len(result.unresolved))
        logger.debug("Judged query", preferences=len(result.preferences))
        return result

    @staticmethod
    def aggregate(
        query_id: str,
        judgments: Sequence[RawJudgment],
        expected_pairs: Iterable[tuple[str, str]] = (),
    ) -> QueryJudgment:
        """Build a :class:`QueryJudgment` from already collected votes."""
        ordered = sorted(judgments, key=arrival_key)
        preferences, unresolved = aggregate_judgments(query_id, ordered, expected_pairs)
        return QueryJudgment(
            query_id=query_id,
            judgments=ordered,
            preferences=preferences,
            unresolved=unresolved,
        )

    @log_performance()
    async def judge_all(
        self,
        queries: Sequence[Query],
        pools: Mapping[str, CandidatePool],
        documents: Mapping[str, Document],
        *,
        log_path: str | Path | None = None,
        resume: bool = False,
        jobs: int = 1,
    ) -> list[QueryJudgment]:
        """
        Judge every query that has a candidate pool.

        Queries run ``jobs`` at a time; each batch is appended to the judgment
        log in input order once complete, so the log is identical however the
        requests interleave. With ``resume`` the queries already present in
        the log are aggregated from it instead of being asked again.

        Returns:
            One result per judged query, in input order.

        Raises:
            ValidationError: If two queries share an id.

        """
        logger = self._logger.new_operation("judge_all")
        ensure_unique([query.id for query in queries], "query_id", "queries")
        done: dict[str, list[RawJudgment]] = {}
        log = Path(log_path) if log_path is not None else None
        if log is not None:
            if resume and log.is_file():
                for record in read_jsonl(log, RecordKind.RAW):
                    judgment = RawJudgment.from_record(record.value)
                    done.setdefault(judgment.query_id, []).append(judgment)
                logger.info("Resuming from judgment log", completed=len(done))
            else:
                log.parent.mkdir(parents=True, exist_ok=True)
                log.write_text("", encoding="utf-8")

        todo = [query for query in queries if query.id in pools]
        skipped = len(queries) - len(todo)
        if skipped:
            logger.warning("Queries without a candidate pool were skipped", count=skipped)

        results: list[QueryJudgment] = []
        for start in range(0, len(todo), max(1, jobs)):
            batch = todo[start : start + max(1, jobs)]
            fresh = [query for query in batch if query.id not in done]
            judged = await asyncio.gather(
                *(self.judge_query(query, pools[query.id], documents) for query in fresh)
            )
            by_id = {result.query_id: result for result in judged}
            if log is not None and judged:
                with log.open("a", encoding="utf-8", newline="\n") as handle:
                    handle.writelines(
                        dumps_record(judgment.to_record()) + "\n"
                        for query in fresh
                        for judgment in by_id[query.id].judgments
                    )
            for query in batch:
                if query.id in by_id:
                    results.append(by_id[query.id])
                else:
                    results.append(self._from_log(query, pools[query.id], done[query.id]))

        logger.info(
            "Judging finished",
            queries=len(results),
            preferences=sum(len(r.preferences) for r in results),
            unresolved=sum(len(r.unresolved) for r in results),
        )
        return results

    def _from_log(
        self, query: Query, pool: CandidatePool, judgments: Sequence[RawJudgment]
    ) -> QueryJudgment:
        if self._config.mode == JUDGE_MODE_PAIRWISE:
            expected: Iterable[tuple[str, str]] = schedule_pairs(
                pool,
                PairStrategy.for_pool_size(
                    len(pool.candidates), self._config.round_robin_max, self._config.sampled_k
                ),
                seed=self._config.seed,
            ).pairs
        else:
            expected = itertools.combinations(pool.doc_ids, 2)
        return self.aggregate(query.id, judgments, expected)


def preference_records(results: Iterable[QueryJudgment]) -> list[dict[str, Any]]:
    """Encode aggregated preferences for the preferences artifact."""
    return [
        {
            "query_id": preference.query_id,
            "winner": preference.winner,
            "loser": preference.loser,
            "weight": preference.weight,
        }
        for result in results
        for preference in result.preferences
    ]
