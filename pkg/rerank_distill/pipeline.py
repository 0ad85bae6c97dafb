"""
Stage coordinator for ``pipeline run``.

The pipeline chains judge, fit-elo, filter-negatives and build-dialogue.
Every stage declares the files it reads and writes; the manifest records
their content hashes so a stage whose inputs, seed and configuration are
unchanged (and whose outputs are still intact) is skipped on the next run.
"""

from __future__ import annotations

import hashlib
import json
import logging
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

from .config import config_hash
from .const import (
    CONF_DIALOGUE,
    CONF_ELO,
    CONF_FILTER,
    CONF_JUDGE,
    CONF_MOCK_TEACHER,
    CONF_RUNTIME,
    CONF_TEACHER,
    JUDGE_MODE_LISTWISE,
)
from .context_logger import ContextLogger, log_performance
from .dialogue_builder import DialogueBuilder, stage2_records, stage3_records
from .elo_fit import calibrated_records, fit_queries, normalize_scores
from .exceptions import DataError
from .judge_orchestrator import JudgeOrchestrator, preference_records
from .mock_judge import MockTeacher
from .negative_filter import FilterGroup, NegativeCandidate, filter_all
from .records import (
    RecordKind,
    atomic_writer,
    index_by_id,
    read_jsonl,
    read_qrels,
    read_values,
    write_jsonl,
)
from .teacher_client import JudgmentCache, TeacherClient

if TYPE_CHECKING:
    from collections.abc import AsyncIterator, Awaitable, Callable, Mapping, Sequence

    from .config import Settings
    from .models import CandidatePool, Qrels
    from .teacher_client import Teacher

_LOGGER = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

STAGE_JUDGE = "judge"
STAGE_FIT = "fit-elo"
STAGE_FILTER = "filter-negatives"
STAGE_DIALOGUE = "build-dialogue"

STAGE_SECTIONS: dict[str, tuple[str, ...]] = {
    STAGE_JUDGE: (CONF_TEACHER, CONF_JUDGE),
    STAGE_FIT: (CONF_ELO,),
    STAGE_FILTER: (CONF_FILTER,),
    STAGE_DIALOGUE: (CONF_TEACHER, CONF_JUDGE, CONF_ELO, CONF_FILTER, CONF_DIALOGUE),
}
TEACHER_STAGES = frozenset({STAGE_JUDGE, STAGE_DIALOGUE})

JUDGMENTS_FILE = "judgments.jsonl"
PREFERENCES_FILE = "preferences.jsonl"
SCORES_FILE = "scores.jsonl"
DECISIONS_FILE = "decisions.jsonl"
RELABEL_FILE = "relabel.jsonl"
EXAMPLES_FILE = "examples.jsonl"
STAGE2_FILE = "stage2.jsonl"
STAGE3_FILE = "stage3.jsonl"
INCOMPLETE_FILE = "incomplete.jsonl"


@asynccontextmanager
async def teacher_session(settings: Settings) -> AsyncIterator[Teacher]:
    """Yield the configured teacher: the mock judge or a live cached client."""
    if settings.mock_teacher:
        yield MockTeacher(settings.seed)
        return
    client = TeacherClient(
        settings.endpoints(),
        cache=JudgmentCache(settings.cache_dir),
        max_in_flight=settings.max_in_flight,
    )
    async with client:
        yield client
    _LOGGER.info(
        "Teacher usage: %d network calls, %d cache hits", client.network_calls, client.cache_hits
    )


def file_hash(path: str | Path) -> str:
    """SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def stage_config_hash(settings: Settings, stage: str) -> str:
    """Hash the configuration sections a stage depends on."""
    subset: dict[str, Any] = {section: settings.data[section] for section in STAGE_SECTIONS[stage]}
    if stage in TEACHER_STAGES:
        subset[CONF_RUNTIME] = {CONF_MOCK_TEACHER: settings.mock_teacher}
    return config_hash(subset)


@dataclass(slots=True)
class StageEntry:
    """Manifest entry for one stage."""

    stage: str
    inputs: dict[str, str]
    outputs: dict[str, str]
    seed: int
    config_hash: str

    def to_record(self) -> dict[str, Any]:
        """Encode for the manifest."""
        return {
            "stage": self.stage,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "seed": self.seed,
            "config_hash": self.config_hash,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> StageEntry:
        """Decode a manifest entry."""
        return cls(
            stage=str(record["stage"]),
            inputs=dict(record["inputs"]),
            outputs=dict(record["outputs"]),
            seed=int(record["seed"]),
            config_hash=str(record["config_hash"]),
        )


@dataclass(slots=True)
class Manifest:
    """Stage entries of one output directory, in stage order."""

    path: Path
    entries: dict[str, StageEntry] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> Manifest:
        """
        Load an existing manifest, or start an empty one.

        Raises:
            DataError: If the manifest exists but cannot be decoded.

        """
        manifest = cls(path)
        if not path.is_file():
            return manifest
        try:
            records = json.loads(path.read_text(encoding="utf-8"))
            for record in records:
                entry = StageEntry.from_record(record)
                manifest.entries[entry.stage] = entry
        except (ValueError, KeyError, TypeError) as exc:
            msg = f"Manifest {path} is corrupt"
            raise DataError(msg, details={"path": str(path), "error": str(exc)}) from exc
        return manifest

    def record(self, entry: StageEntry) -> None:
        """Add or replace a stage entry and persist the manifest."""
        self.entries[entry.stage] = entry
        self.write()

    def write(self) -> None:
        """Write the manifest atomically."""
        with atomic_writer(self.path) as handle:
            json.dump(
                [entry.to_record() for entry in self.entries.values()],
                handle,
                indent=2,
                sort_keys=True,
            )
            handle.write("\n")


@dataclass(frozen=True, slots=True)
class PipelineInputs:
    """Input files of a pipeline run."""

    queries: Path
    documents: Path
    pools: Path
    qrels: Path
    dialogues: Path


def pool_filter_groups(
    pools: Mapping[str, CandidatePool],
    qrels: Qrels,
    scores: Mapping[tuple[str, str], float],
) -> dict[str, FilterGroup]:
    """
    Turn candidate pools into filter groups.

    Pool members graded relevant in ``qrels`` are positives; the rest are
    candidate negatives. The calibrated teacher score, where one exists,
    serves as the verifier score. Queries without a pooled positive are
    skipped.
    """
    logger = ContextLogger(_LOGGER, "pipeline").new_operation("pool_filter_groups")
    groups: dict[str, FilterGroup] = {}
    skipped = []
    for query_id in sorted(pools):
        pool = pools[query_id]
        relevant = qrels.relevant(query_id)
        positives = [c for c in pool.candidates if c.doc_id in relevant]
        if not positives:
            skipped.append(query_id)
            continue
        verified = [
            scores[(query_id, c.doc_id)] for c in positives if (query_id, c.doc_id) in scores
        ]
        groups[query_id] = FilterGroup(
            query_id=query_id,
            positive_sim=max(c.sim for c in positives),
            candidates=tuple(
                NegativeCandidate(query_id, c.doc_id, c.sim, scores.get((query_id, c.doc_id)))
                for c in pool.candidates
                if c.doc_id not in relevant
            ),
            positive_verifier_score=max(verified) if verified else None,
        )
    if skipped:
        logger.warning("Queries without a pooled positive were skipped", count=len(skipped))
    return groups


class Pipeline:
    """Runs the distillation stages into one output directory."""

    def __init__(
        self,
        settings: Settings,
        teacher: Teacher,
        inputs: PipelineInputs,
        out_dir: str | Path,
        *,
        jobs: int = 1,
        force: bool = False,
    ) -> None:
        """
        Initialize the pipeline.

        Args:
            settings: Effective configuration.
            teacher: Live client or mock judge.
            inputs: Input files.
            out_dir: Directory receiving every artifact and the manifest.
            jobs: Queries or dialogues processed concurrently.
            force: Rerun stages even when their hashes match.

        """
        self._settings = settings
        self._teacher = teacher
        self._inputs = inputs
        self._out = Path(out_dir)
        self._jobs = max(1, jobs)
        self._force = force
        self._logger = ContextLogger(_LOGGER, "pipeline")
        self._manifest = Manifest.load(self._out / MANIFEST_NAME)
        self.skipped_stages: list[str] = []

    @property
    def manifest(self) -> Manifest:
        """Return the run manifest."""
        return self._manifest

    def artifact(self, name: str) -> Path:
        """Return the path of an artifact in the output directory."""
        return self._out / name

    def _key(self, path: Path) -> str:
        """Manifest key: path relative to the output directory, else the file name."""
        try:
            return path.resolve().relative_to(self._out.resolve()).as_posix()
        except ValueError:
            return path.name

    def _hashes(self, paths: Sequence[Path]) -> dict[str, str]:
        missing = [str(path) for path in paths if not path.is_file()]
        if missing:
            msg = "Stage input not found"
            raise DataError(msg, details={"paths": missing})
        return {self._key(path): file_hash(path) for path in paths}

    def _up_to_date(self, entry: StageEntry, outputs: Sequence[Path]) -> bool:
        previous = self._manifest.entries.get(entry.stage)
        if self._force or previous is None:
            return False
        if (previous.inputs, previous.seed, previous.config_hash) != (
            entry.inputs,
            entry.seed,
            entry.config_hash,
        ):
            return False
        if any(not path.is_file() for path in outputs):
            return False
        return self._hashes(outputs) == previous.outputs

    async def _stage(
        self,
        stage: str,
        inputs: Sequence[Path],
        outputs: Sequence[Path],
        action: Callable[[], Awaitable[None]],
    ) -> None:
        logger = self._logger.new_operation("stage").bind(stage=stage)
        entry = StageEntry(
            stage=stage,
            inputs=self._hashes(inputs),
            outputs={},
            seed=self._settings.seed,
            config_hash=stage_config_hash(self._settings, stage),
        )
        if self._up_to_date(entry, outputs):
            logger.info("Stage up to date, skipped")
            self.skipped_stages.append(stage)
            return
        await action()
        entry.outputs = self._hashes(outputs)
        self._manifest.record(entry)
        logger.info("Stage finished", outputs=len(outputs))

    def _pools(self) -> dict[str, CandidatePool]:
        return index_by_id(
            read_values(self._inputs.pools, RecordKind.POOL), lambda p: p.query_id, "pool"
        )

    async def _judge(self) -> None:
        queries = read_values(self._inputs.queries, RecordKind.QUERY)
        documents = index_by_id(
            read_values(self._inputs.documents, RecordKind.DOCUMENT), lambda d: d.id, "document"
        )
        orchestrator = JudgeOrchestrator(self._teacher, self._settings.judge())
        results = await orchestrator.judge_all(
            queries,
            self._pools(),
            documents,
            log_path=self.artifact(JUDGMENTS_FILE),
            jobs=self._jobs,
        )
        write_jsonl(self.artifact(PREFERENCES_FILE), preference_records(results))

    async def _fit(self) -> None:
        pools = self._pools()
        fit_config = self._settings.fit()
        fits = fit_queries(
            read_values(self.artifact(PREFERENCES_FILE), RecordKind.PREFERENCE),
            fit_config,
            pools={query_id: pool.doc_ids for query_id, pool in pools.items()},
        )
        write_jsonl(
            self.artifact(SCORES_FILE),
            (
                record
                for elos in fits.values()
                for record in calibrated_records(elos, normalize_scores(elos, fit_config))
            ),
        )

    async def _filter(self) -> None:
        scores = {
            (record.value["query_id"], record.value["doc_id"]): float(record.value["score"])
            for record in read_jsonl(self.artifact(SCORES_FILE), RecordKind.RAW)
        }
        groups = pool_filter_groups(self._pools(), read_qrels(self._inputs.qrels), scores)
        result = filter_all(groups, self._settings.filter())
        write_jsonl(self.artifact(DECISIONS_FILE), (d.to_record() for d in result.decisions))
        write_jsonl(self.artifact(RELABEL_FILE), (r.to_record() for r in result.relabel))

    async def _dialogue(self) -> None:
        dialogue_config = self._settings.dialogue()
        orchestrator = None
        if dialogue_config.soft_labels:
            orchestrator = JudgeOrchestrator(
                self._teacher, self._settings.judge(mode=JUDGE_MODE_LISTWISE)
            )
        builder = DialogueBuilder(
            self._teacher,
            dialogue_config,
            orchestrator=orchestrator,
            fit_config=self._settings.fit(),
        )
        results = await builder.build_all(
            read_values(self._inputs.dialogues, RecordKind.DIALOGUE), jobs=self._jobs
        )
        examples = [example for result in results for example in result.examples]
        write_jsonl(self.artifact(EXAMPLES_FILE), (e.to_record() for e in examples))
        write_jsonl(self.artifact(STAGE2_FILE), stage2_records(examples))
        write_jsonl(self.artifact(STAGE3_FILE), stage3_records(examples))
        write_jsonl(
            self.artifact(INCOMPLETE_FILE),
            (
                {"example_id": example_id, "reason": reason}
                for result in results
                for example_id, reason in result.incomplete
            ),
        )

    @log_performance()
    async def run(self) -> Manifest:
        """
        Run every stage in order.

        Returns:
            The manifest, also written to ``manifest.json`` in the output
            directory.

        Raises:
            DataError: For missing or malformed inputs.
            TeacherError: If the teacher cannot be reached.

        """
        inputs = self._inputs
        self._out.mkdir(parents=True, exist_ok=True)
        await self._stage(
            STAGE_JUDGE,
            [inputs.queries, inputs.documents, inputs.pools],
            [self.artifact(JUDGMENTS_FILE), self.artifact(PREFERENCES_FILE)],
            self._judge,
        )
        await self._stage(
            STAGE_FIT,
            [self.artifact(PREFERENCES_FILE), inputs.pools],
            [self.artifact(SCORES_FILE)],
            self._fit,
        )
        await self._stage(
            STAGE_FILTER,
            [inputs.pools, inputs.qrels, self.artifact(SCORES_FILE)],
            [self.artifact(DECISIONS_FILE), self.artifact(RELABEL_FILE)],
            self._filter,
        )
        await self._stage(
            STAGE_DIALOGUE,
            [inputs.dialogues],
            [
                self.artifact(EXAMPLES_FILE),
                self.artifact(STAGE2_FILE),
                self.artifact(STAGE3_FILE),
                self.artifact(INCOMPLETE_FILE),
            ],
            self._dialogue,
        )
        self._manifest.write()
        self._logger.info(
            "Pipeline finished",
            stages=len(self._manifest.entries),
            skipped=len(self.skipped_stages),
        )
        return self._manifest
