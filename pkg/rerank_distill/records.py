"""
Line-delimited JSON and TREC serialization.

Readers stream records in file order and attach the 1-based line number to
each one. Writers go through a temporary file and an atomic rename, so a file
is either complete or absent.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from collections import defaultdict
from contextlib import contextmanager
from enum import StrEnum
from pathlib import Path
from typing import IO, TYPE_CHECKING, Any, Generic, NamedTuple, TypeVar

from .const import FLOAT_DIGITS
from .exceptions import DataError, RecordParseError, ValidationError
from .models import (
    Candidate,
    CandidatePool,
    Dialogue,
    DialogueTurn,
    Document,
    PairwisePreference,
    Qrels,
    Query,
    RunRanking,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Iterator, Mapping

_LOGGER = logging.getLogger(__name__)

T = TypeVar("T")


class RecordKind(StrEnum):
    """Record schemas understood by :func:`read_jsonl`."""

    RAW = "raw"
    QUERY = "query"
    DOCUMENT = "document"
    POOL = "pool"
    QREL = "qrel"
    RUN = "run"
    PREFERENCE = "preference"
    DIALOGUE = "dialogue"


class LineRecord(NamedTuple, Generic[T]):
    """A decoded record and the line it came from."""

    line: int
    value: T


class QrelRow(NamedTuple):
    """One qrels line."""

    query_id: str
    doc_id: str
    grade: int


class RunRow(NamedTuple):
    """One run line."""

    query_id: str
    doc_id: str
    score: float


def _require(obj: dict[str, Any], key: str) -> Any:
    if key not in obj:
        msg = f"Missing required field '{key}'"
        raise ValidationError(msg, details={"field": key})
    return obj[key]


def _decode_turn(obj: dict[str, Any]) -> DialogueTurn:
    return DialogueTurn(
        role=_require(obj, "role"),
        text=_require(obj, "text"),
        turn_index=_require(obj, "turn_index"),
    )


def decode_query(obj: dict[str, Any]) -> Query:
    """Decode a query record."""
    history = obj.get("history") or []
    return Query(
        id=_require(obj, "id"),
        text=_require(obj, "text"),
        category=obj.get("category"),
        history=tuple(_decode_turn(turn) for turn in history),
    )


def decode_document(obj: dict[str, Any]) -> Document:
    """Decode a document record."""
    return Document(id=_require(obj, "id"), text=_require(obj, "text"))


def decode_pool(obj: dict[str, Any]) -> CandidatePool:
    """Decode a candidate pool record."""
    candidates = _require(obj, "candidates")
    if not isinstance(candidates, list):
        msg = "Field 'candidates' must be a list"
        raise ValidationError(msg, details={"field": "candidates"})
    return CandidatePool(
        query_id=_require(obj, "query_id"),
        candidates=tuple(
            Candidate(doc_id=_require(item, "doc_id"), sim=_require(item, "sim"))
            for item in candidates
        ),
    )


def decode_qrel(obj: dict[str, Any]) -> QrelRow:
    """Decode a qrels record."""
    return QrelRow(
        query_id=_require(obj, "query_id"),
        doc_id=_require(obj, "doc_id"),
        grade=_require(obj, "grade"),
    )


def decode_run(obj: dict[str, Any]) -> RunRow:
    """Decode a run record."""
    return RunRow(
        query_id=_require(obj, "query_id"),
        doc_id=_require(obj, "doc_id"),
        score=_require(obj, "score"),
    )


def decode_preference(obj: dict[str, Any]) -> PairwisePreference:
    """Decode a preference record."""
    return PairwisePreference(
        query_id=_require(obj, "query_id"),
        winner=_require(obj, "winner"),
        loser=_require(obj, "loser"),
        weight=obj.get("weight", 1.0),
    )


def decode_dialogue(obj: dict[str, Any]) -> Dialogue:
    """Decode a dialogue record."""
    return Dialogue(
        dialogue_id=_require(obj, "dialogue_id"),
        turns=tuple(_decode_turn(turn) for turn in _require(obj, "turns")),
        category=obj.get("category"),
    )


DECODERS: dict[RecordKind, Callable[[dict[str, Any]], Any]] = {
    RecordKind.RAW: lambda obj: obj,
    RecordKind.QUERY: decode_query,
    RecordKind.DOCUMENT: decode_document,
    RecordKind.POOL: decode_pool,
    RecordKind.QREL: decode_qrel,
    RecordKind.RUN: decode_run,
    RecordKind.PREFERENCE: decode_preference,
    RecordKind.DIALOGUE: decode_dialogue,
}


def _iter_lines(path: Path) -> Iterator[tuple[int, int, str]]:
    """Yield (line number, byte offset, decoded text) for non-blank lines."""
    offset = 0
    with path.open("rb") as handle:
        for line_number, raw in enumerate(handle, start=1):
            start = offset
            offset += len(raw)
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                msg = f"Line {line_number} is not valid UTF-8"
                raise RecordParseError(
                    msg, line=line_number, offset=start, path=str(path)
                ) from exc
            if text.strip():
                yield line_number, start, text


def read_jsonl(
    path: str | Path, record_kind: RecordKind | str = RecordKind.RAW
) -> Iterator[LineRecord[Any]]:
    """
    Stream records from a JSONL file in file order.

    Args:
        path: File to read.
        record_kind: Schema used to decode each line. Unknown fields are ignored.

    Yields:
        LineRecord pairs of line number and decoded value.

    Raises:
        RecordParseError: For a malformed line, carrying line number and byte
            offset.
        DataError: If the file does not exist.

    """
    path = Path(path)
    decoder = DECODERS[RecordKind(record_kind)]
    if not path.is_file():
        msg = f"Input file not found: {path}"
        raise DataError(msg, details={"path": str(path)})

    for line_number, offset, text in _iter_lines(path):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            msg = f"Malformed JSON on line {line_number}: {exc.msg}"
            raise RecordParseError(
                msg,
                line=line_number,
                offset=offset + exc.pos,
                path=str(path),
            ) from exc
        if not isinstance(obj, dict):
            msg = f"Line {line_number} is not a JSON object"
            raise RecordParseError(msg, line=line_number, offset=offset, path=str(path))
        try:
            value = decoder(obj)
        except (ValidationError, TypeError, AttributeError) as exc:
            msg = f"Invalid {record_kind} record on line {line_number}: {exc}"
            raise RecordParseError(
                msg, line=line_number, offset=offset, path=str(path)
            ) from exc
        yield LineRecord(line_number, value)


def read_values(path: str | Path, record_kind: RecordKind | str) -> list[Any]:
    """Read every record of a JSONL file, dropping line numbers."""
    return [record.value for record in read_jsonl(path, record_kind)]


def round_float(value: float) -> float:
    """Round a float for artifact output so files compare byte-for-byte."""
    return round(float(value), FLOAT_DIGITS)


@contextmanager
def atomic_writer(path: str | Path) -> Iterator[IO[str]]:
    """
    Open a text file for writing that appears only once complete.

    Raises:
        DataError: If the destination is not writable.

    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    except OSError as exc:
        msg = f"Cannot write to {path}"
        raise DataError(msg, details={"path": str(path), "error": str(exc)}) from exc

    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            yield handle
        Path(tmp_name).replace(path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def dumps_record(obj: Mapping[str, Any]) -> str:
    """Serialize one record as a single JSON line (no trailing newline)."""
    return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | Path, records: Iterable[Mapping[str, Any]]) -> int:
    """
    Write records as JSONL.

    Returns:
        The number of records written.

    """
    count = 0
    with atomic_writer(path) as handle:
        for record in records:
            handle.write(dumps_record(record))
            handle.write("\n")
            count += 1
    _LOGGER.debug("Wrote %d records to %s", count, path)
    return count


def encode_turn(turn: DialogueTurn) -> dict[str, Any]:
    """Encode a dialogue turn."""
    return {"role": str(turn.role), "text": turn.text, "turn_index": turn.turn_index}


def encode_query(query: Query) -> dict[str, Any]:
    """Encode a query; optional fields are omitted when empty."""
    record: dict[str, Any] = {"id": query.id, "text": query.text}
    if query.category is not None:
        record["category"] = query.category
    if query.history:
        record["history"] = [encode_turn(turn) for turn in query.history]
    return record


def encode_document(document: Document) -> dict[str, Any]:
    """Encode a document."""
    return {"id": document.id, "text": document.text}


def encode_pool(pool: CandidatePool) -> dict[str, Any]:
    """Encode a candidate pool."""
    return {
        "query_id": pool.query_id,
        "candidates": [{"doc_id": c.doc_id, "sim": c.sim} for c in pool.candidates],
    }


def encode_preference(preference: PairwisePreference) -> dict[str, Any]:
    """Encode a preference."""
    return {
        "query_id": preference.query_id,
        "winner": preference.winner,
        "loser": preference.loser,
        "weight": preference.weight,
    }


def encode_dialogue(dialogue: Dialogue) -> dict[str, Any]:
    """Encode a dialogue."""
    record: dict[str, Any] = {
        "dialogue_id": dialogue.dialogue_id,
        "turns": [encode_turn(turn) for turn in dialogue.turns],
    }
    if dialogue.category is not None:
        record["category"] = dialogue.category
    return record


def encode_run(run: RunRanking) -> list[dict[str, Any]]:
    """Encode a ranking as one record per document, in rank order."""
    return [
        {"query_id": run.query_id, "doc_id": doc_id, "score": score}
        for doc_id, score in run.scored
    ]


def encode_qrels(qrels: Qrels) -> list[dict[str, Any]]:
    """Encode qrels as one record per judged pair."""
    return [
        {"query_id": query_id, "doc_id": doc_id, "grade": grade}
        for query_id in qrels.query_ids()
        for doc_id, grade in sorted(qrels.for_query(query_id).items())
    ]


def _group_run_rows(rows: Iterable[RunRow]) -> dict[str, RunRanking]:
    grouped: dict[str, list[tuple[str, float]]] = defaultdict(list)
    for row in rows:
        grouped[row.query_id].append((row.doc_id, row.score))
    return {
        query_id: RunRanking(query_id=query_id, scored=tuple(scored))
        for query_id, scored in grouped.items()
    }


def write_trec_run(
    runs: Iterable[RunRanking], tag: str, path: str | Path
) -> int:
    """
    Write rankings in the 6-column TREC format ``qid Q0 docid rank score tag``.

    Queries are written in id order; documents in the deterministic rank order
    starting at rank 1. Scores use the shortest round-trip representation.

    Returns:
        The number of lines written.

    Raises:
        ValidationError: If the tag contains whitespace.
        DataError: If the path is not writable.

    """
    if not tag or any(ch.isspace() for ch in tag):
        msg = "TREC run tag must be non-empty and contain no whitespace"
        raise ValidationError(msg, details={"tag": tag})

    count = 0
    with atomic_writer(path) as handle:
        for run in sorted(runs, key=lambda item: item.query_id):
            for rank, (doc_id, score) in enumerate(run.scored, start=1):
                handle.write(f"{run.query_id} Q0 {doc_id} {rank} {score!r} {tag}\n")
                count += 1
    return count


def read_trec_run(path: str | Path) -> dict[str, RunRanking]:
    """
    Read a 6-column TREC run file.

    Raises:
        RecordParseError: For a line without six columns or a bad score.

    """
    path = Path(path)
    if not path.is_file():
        msg = f"Input file not found: {path}"
        raise DataError(msg, details={"path": str(path)})

    rows: list[RunRow] = []
    for line_number, offset, text in _iter_lines(path):
        columns = text.split()
        if len(columns) != 6:  # noqa: PLR2004
            msg = f"TREC run line {line_number} must have 6 columns"
            raise RecordParseError(
                msg, line=line_number, offset=offset, path=str(path),
                details={"columns": len(columns)},
            )
        query_id, _, doc_id, _, score, _ = columns
        try:
            rows.append(RunRow(query_id, doc_id, float(score)))
        except ValueError as exc:
            msg = f"Bad score on TREC run line {line_number}"
            raise RecordParseError(
                msg, line=line_number, offset=offset, path=str(path)
            ) from exc
    try:
        return _group_run_rows(rows)
    except ValidationError as exc:
        msg = f"Invalid TREC run {path}: {exc.message}"
        raise DataError(msg, details=exc.details) from exc


def _looks_like_jsonl(path: Path) -> bool:
    for _, _, text in _iter_lines(path):
        return text.lstrip().startswith("{")
    return True


def read_run(path: str | Path) -> dict[str, RunRanking]:
    """Read a run in either JSONL or TREC format (detected from content)."""
    path = Path(path)
    if not path.is_file():
        msg = f"Input file not found: {path}"
        raise DataError(msg, details={"path": str(path)})
    if not _looks_like_jsonl(path):
        return read_trec_run(path)
    try:
        return _group_run_rows(read_values(path, RecordKind.RUN))
    except ValidationError as exc:
        msg = f"Invalid run {path}: {exc.message}"
        raise DataError(msg, details=exc.details) from exc


def read_qrels(path: str | Path) -> Qrels:
    """
    Read qrels from JSONL, or from the 4-column TREC ``qid 0 docid grade`` form.

    Raises:
        RecordParseError: For a malformed line.

    """
    path = Path(path)
    if not path.is_file():
        msg = f"Input file not found: {path}"
        raise DataError(msg, details={"path": str(path)})

    grades: dict[tuple[str, str], int] = {}
    if _looks_like_jsonl(path):
        for record in read_jsonl(path, RecordKind.QREL):
            row: QrelRow = record.value
            grades[(row.query_id, row.doc_id)] = row.grade
    else:
        for line_number, offset, text in _iter_lines(path):
            columns = text.split()
            if len(columns) != 4:  # noqa: PLR2004
                msg = f"TREC qrels line {line_number} must have 4 columns"
                raise RecordParseError(msg, line=line_number, offset=offset, path=str(path))
            try:
                grades[(columns[0], columns[2])] = int(columns[3])
            except ValueError as exc:
                msg = f"Bad grade on TREC qrels line {line_number}"
                raise RecordParseError(
                    msg, line=line_number, offset=offset, path=str(path)
                ) from exc
    try:
        return Qrels(grades)
    except ValidationError as exc:
        msg = f"Invalid qrels {path}: {exc.message}"
        raise DataError(msg, details=exc.details) from exc


def index_by_id(items: Iterable[T], key: Callable[[T], str], kind: str) -> dict[str, T]:
    """
    Index records by id, rejecting duplicates.

    Raises:
        ValidationError: If two records share an id.

    """
    index: dict[str, T] = {}
    for item in items:
        item_id = key(item)
        if item_id in index:
            msg = f"Duplicate {kind} id"
            raise ValidationError(msg, details={"id": item_id, "kind": kind})
        index[item_id] = item
    return index
