"""Command-line interface."""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import TYPE_CHECKING, Any, NoReturn

from . import calibration, metrics
from .config import Settings
from .const import (
    EXIT_DATA,
    EXIT_OK,
    JUDGE_MODE_LISTWISE,
    JUDGE_MODE_PAIRWISE,
    NORMALIZATION_LOGISTIC,
    NORMALIZATION_MINMAX,
)
from .context_logger import setup_logging
from .dialogue_builder import DialogueBuilder, stage2_records, stage3_records
from .elo_fit import calibrated_records, fit_queries, normalize_scores
from .exceptions import DistillError, UsageError
from .judge_orchestrator import JudgeOrchestrator, preference_records
from .losses import check_gradients
from .negative_filter import filter_all, read_filter_input
from .pipeline import Pipeline, PipelineInputs, teacher_session
from .records import (
    RecordKind,
    atomic_writer,
    dumps_record,
    index_by_id,
    read_qrels,
    read_run,
    read_values,
    write_jsonl,
)
from .rubric import gate, read_audit

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

_LOGGER = logging.getLogger(__name__)

FORMAT_JSON = "json"
FORMAT_TEXT = "text"


class ArgumentParser(argparse.ArgumentParser):
    """Parser that raises :class:`UsageError` instead of exiting."""

    def error(self, message: str) -> NoReturn:
        """Raise with the usage text attached."""
        msg = f"{message}\n{self.format_usage()}"
        raise UsageError(msg)


def _cutoffs(value: str) -> list[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        msg = f"invalid cutoff list: {value!r}"
        raise argparse.ArgumentTypeError(msg) from exc


def _common_options() -> ArgumentParser:
    """Options accepted both before and after the subcommand."""
    common = ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Run seed")
    common.add_argument(
        "--config", type=Path, default=argparse.SUPPRESS, help="YAML configuration file"
    )
    common.add_argument(
        "--cache-dir", default=argparse.SUPPRESS, help="Teacher response cache directory"
    )
    common.add_argument(
        "--mock-teacher",
        action="store_true",
        default=argparse.SUPPRESS,
        help="Answer every teacher prompt with the offline mock judge",
    )
    common.add_argument(
        "--jobs", type=int, default=argparse.SUPPRESS, help="Concurrent queries or dialogues"
    )
    common.add_argument(
        "--max-in-flight",
        type=int,
        default=argparse.SUPPRESS,
        help="Concurrent teacher requests",
    )
    common.add_argument(
        "-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="Debug logging"
    )
    return common


def build_parser() -> ArgumentParser:
    """Build the argument parser."""
    common = _common_options()
    parser = ArgumentParser(
        prog="rerank-distill",
        description="Reranker distillation toolkit: teacher judgments to calibrated training data",
        parents=[common],
    )
    commands = parser.add_subparsers(dest="command", metavar="command", required=True)

    judge = commands.add_parser("judge", parents=[common], help="Collect teacher preferences")
    judge.add_argument("--queries", type=Path, required=True)
    judge.add_argument("--documents", type=Path, required=True)
    judge.add_argument("--pools", type=Path, required=True)
    judge.add_argument("--log", type=Path, required=True, help="Judgment log to write")
    judge.add_argument("--out", type=Path, required=True, help="Preferences file to write")
    judge.add_argument("--mode", choices=[JUDGE_MODE_PAIRWISE, JUDGE_MODE_LISTWISE])
    judge.add_argument("--votes", type=int)
    judge.add_argument("--resume", action="store_true", help="Reuse queries already in the log")
    judge.set_defaults(handler=_cmd_judge)

    fit = commands.add_parser("fit-elo", parents=[common], help="Fit Bradley-Terry scores")
    fit.add_argument("--preferences", type=Path, required=True)
    fit.add_argument("--pools", type=Path, help="Pools listing documents to score")
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--normalization", choices=[NORMALIZATION_LOGISTIC, NORMALIZATION_MINMAX])
    fit.add_argument("--prior-strength", type=float)
    fit.add_argument("--tau", type=float)
    fit.set_defaults(handler=_cmd_fit)

    filt = commands.add_parser(
        "filter-negatives", parents=[common], help="Bucket and verify candidate negatives"
    )
    filt.add_argument("--input", type=Path, required=True)
    filt.add_argument("--out", type=Path, required=True, help="Decisions file")
    filt.add_argument("--relabel", type=Path, help="Relabel queue file")
    filt.add_argument("--hard-gap", type=float)
    filt.add_argument("--easy-rate", type=float)
    filt.add_argument("--margin", type=float)
    filt.add_argument("--global-quota", action="store_true", default=None)
    filt.add_argument("--require-verifier", action="store_true", default=None)
    filt.set_defaults(handler=_cmd_filter)

    dialogue = commands.add_parser(
        "build-dialogue", parents=[common], help="Build multi-turn training examples"
    )
    dialogue.add_argument("--dialogues", type=Path, required=True)
    dialogue.add_argument("--out", type=Path, required=True, help="Training examples file")
    dialogue.add_argument("--stage2", type=Path, help="Pointwise export")
    dialogue.add_argument("--stage3", type=Path, help="Listwise export")
    dialogue.add_argument("--n-neg", type=int)
    dialogue.add_argument("--token-budget", type=int)
    dialogue.add_argument("--soft-labels", action="store_true", default=None)
    dialogue.set_defaults(handler=_cmd_dialogue)

    rubric = commands.add_parser("rubric", parents=[common], help="Score audit records")
    rubric.add_argument("--audit", type=Path, required=True)
    rubric.add_argument("--min-rubric", type=float, help="Drop records below this total")
    rubric.add_argument("--out", type=Path)
    rubric.set_defaults(handler=_cmd_rubric)

    evaluate = commands.add_parser("evaluate", parents=[common], help="IR metrics of a run")
    evaluate.add_argument("--run", type=Path, required=True, help="JSONL or TREC run")
    evaluate.add_argument("--qrels", type=Path, required=True)
    evaluate.add_argument("--queries", type=Path, help="Queries with categories")
    evaluate.add_argument("--cutoffs", type=_cutoffs, help="Comma-separated, e.g. 1,3,10")
    evaluate.add_argument("--format", choices=[FORMAT_JSON, FORMAT_TEXT], default=FORMAT_JSON)
    evaluate.add_argument("--out", type=Path)
    evaluate.set_defaults(handler=_cmd_evaluate)

    calibrate = commands.add_parser(
        "calibrate", parents=[common], help="Score distribution diagnostics"
    )
    calibrate.add_argument("--scores", type=Path, required=True)
    calibrate.add_argument("--qrels", type=Path, help="Labels for the threshold sweep")
    calibrate.add_argument("--bins", type=int)
    calibrate.add_argument("--grid-step", type=float)
    calibrate.add_argument("--format", choices=[FORMAT_JSON, FORMAT_TEXT], default=FORMAT_JSON)
    calibrate.add_argument("--out", type=Path)
    calibrate.set_defaults(handler=_cmd_calibrate)

    losses = commands.add_parser("losses", parents=[common], help="Loss utilities")
    losses_commands = losses.add_subparsers(dest="losses_command", metavar="action", required=True)
    check = losses_commands.add_parser(
        "check", parents=[common], help="Finite-difference gradient check"
    )
    check.add_argument("--cases", type=int, default=1000)
    check.set_defaults(handler=_cmd_losses_check)

    pipeline = commands.add_parser("pipeline", parents=[common], help="Chained stages")
    pipeline_commands = pipeline.add_subparsers(
        dest="pipeline_command", metavar="action", required=True
    )
    run = pipeline_commands.add_parser(
        "run", parents=[common], help="judge, fit-elo, filter-negatives, build-dialogue"
    )
    run.add_argument("--queries", type=Path, required=True)
    run.add_argument("--documents", type=Path, required=True)
    run.add_argument("--pools", type=Path, required=True)
    run.add_argument("--qrels", type=Path, required=True)
    run.add_argument("--dialogues", type=Path, required=True)
    run.add_argument("--out", type=Path, required=True, help="Output directory")
    run.add_argument("--force", action="store_true", help="Rerun stages with matching hashes")
    run.set_defaults(handler=_cmd_pipeline)
    return parser


OVERRIDES: dict[str, str] = {
    "seed": "runtime.seed",
    "cache_dir": "runtime.cache_dir",
    "mock_teacher": "runtime.mock_teacher",
    "jobs": "runtime.jobs",
    "max_in_flight": "runtime.max_in_flight",
    "mode": "judge.mode",
    "votes": "judge.votes",
    "normalization": "elo.normalization",
    "prior_strength": "elo.prior_strength",
    "tau": "elo.tau",
    "hard_gap": "filter.hard_gap",
    "easy_rate": "filter.easy_rate",
    "margin": "filter.margin",
    "global_quota": "filter.global_quota",
    "require_verifier": "filter.require_verifier",
    "n_neg": "dialogue.n_neg",
    "token_budget": "dialogue.token_budget",
    "soft_labels": "dialogue.soft_labels",
    "cutoffs": "evaluate.cutoffs",
    "bins": "calibrate.bins",
    "grid_step": "calibrate.grid_step",
}


def settings_from_args(args: argparse.Namespace) -> Settings:
    """Merge command-line flags over the config file over the defaults."""
    overrides = {dotted: getattr(args, name, None) for name, dotted in OVERRIDES.items()}
    return Settings.from_sources(getattr(args, "config", None), overrides)


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    with atomic_writer(out) as handle:
        handle.write(text)


def _dump_json(value: Any) -> str:
    return json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


async def _cmd_judge(args: argparse.Namespace, settings: Settings) -> int:
    queries = read_values(args.queries, RecordKind.QUERY)
    documents = index_by_id(
        read_values(args.documents, RecordKind.DOCUMENT), lambda d: d.id, "document"
    )
    pools = index_by_id(read_values(args.pools, RecordKind.POOL), lambda p: p.query_id, "pool")
    async with teacher_session(settings) as teacher:
        orchestrator = JudgeOrchestrator(teacher, settings.judge())
        results = await orchestrator.judge_all(
            queries,
            pools,
            documents,
            log_path=args.log,
            resume=args.resume,
            jobs=settings.jobs,
        )
    write_jsonl(args.out, preference_records(results))
    return EXIT_OK


async def _cmd_fit(args: argparse.Namespace, settings: Settings) -> int:
    pools = None
    if args.pools is not None:
        pools = {
            pool.query_id: pool.doc_ids for pool in read_values(args.pools, RecordKind.POOL)
        }
    fit_config = settings.fit()
    fits = fit_queries(
        read_values(args.preferences, RecordKind.PREFERENCE), fit_config, pools=pools
    )
    write_jsonl(
        args.out,
        (
            record
            for elos in fits.values()
            for record in calibrated_records(elos, normalize_scores(elos, fit_config))
        ),
    )
    not_converged = sorted(query_id for query_id, elos in fits.items() if not elos.converged)
    if not_converged:
        _LOGGER.warning("%d queries did not converge: %s", len(not_converged), not_converged[:5])
    return EXIT_OK


async def _cmd_filter(args: argparse.Namespace, settings: Settings) -> int:
    result = filter_all(read_filter_input(args.input), settings.filter())
    write_jsonl(args.out, (decision.to_record() for decision in result.decisions))
    if args.relabel is not None:
        write_jsonl(args.relabel, (entry.to_record() for entry in result.relabel))
    return EXIT_OK


async def _cmd_dialogue(args: argparse.Namespace, settings: Settings) -> int:
    dialogues = read_values(args.dialogues, RecordKind.DIALOGUE)
    dialogue_config = settings.dialogue()
    async with teacher_session(settings) as teacher:
        orchestrator = None
        if dialogue_config.soft_labels:
            orchestrator = JudgeOrchestrator(teacher, settings.judge(mode=JUDGE_MODE_LISTWISE))
        builder = DialogueBuilder(
            teacher, dialogue_config, orchestrator=orchestrator, fit_config=settings.fit()
        )
        results = await builder.build_all(dialogues, jobs=settings.jobs)
    examples = [example for result in results for example in result.examples]
    write_jsonl(args.out, (example.to_record() for example in examples))
    if args.stage2 is not None:
        write_jsonl(args.stage2, stage2_records(examples))
    if args.stage3 is not None:
        write_jsonl(args.stage3, stage3_records(examples))
    return EXIT_OK


async def _cmd_rubric(args: argparse.Namespace, settings: Settings) -> int:  # noqa: ARG001
    kept = gate(read_audit(args.audit), args.min_rubric)
    _emit("".join(dumps_record(record.to_record()) + "\n" for record in kept), args.out)
    return EXIT_OK


async def _cmd_evaluate(args: argparse.Namespace, settings: Settings) -> int:
    category_map = None
    if args.queries is not None:
        category_map = {
            query.id: query.category for query in read_values(args.queries, RecordKind.QUERY)
        }
    report = metrics.evaluate_run(
        read_run(args.run), read_qrels(args.qrels), settings.cutoffs(), category_map
    )
    if args.format == FORMAT_TEXT:
        _emit(metrics.render_text(report, title=args.run.name), args.out)
    else:
        _emit(_dump_json(report.to_dict()), args.out)
    return EXIT_OK


async def _cmd_calibrate(args: argparse.Namespace, settings: Settings) -> int:
    qrels = read_qrels(args.qrels) if args.qrels is not None else None
    scores, labels = calibration.read_scores(args.scores, qrels)
    report = calibration.build_distribution_report(
        scores, labels, bins=settings.bins, grid_step=settings.grid_step
    )
    if args.format == FORMAT_TEXT:
        _emit(calibration.render_text(report), args.out)
    else:
        _emit(_dump_json(report.to_dict()), args.out)
    return EXIT_OK


async def _cmd_losses_check(args: argparse.Namespace, settings: Settings) -> int:
    report = check_gradients(seed=settings.seed, cases=args.cases)
    for name, error in sorted(report.max_relative_error.items()):
        sys.stdout.write(f"{name}: max relative error {error:.3e}\n")
    sys.stdout.write(f"max relative error: {report.worst:.3e}\n")
    return EXIT_OK if report.passed else EXIT_DATA


async def _cmd_pipeline(args: argparse.Namespace, settings: Settings) -> int:
    inputs = PipelineInputs(
        queries=args.queries,
        documents=args.documents,
        pools=args.pools,
        qrels=args.qrels,
        dialogues=args.dialogues,
    )
    async with teacher_session(settings) as teacher:
        pipeline = Pipeline(
            settings, teacher, inputs, args.out, jobs=settings.jobs, force=args.force
        )
        manifest = await pipeline.run()
    sys.stdout.write(f"{manifest.path}\n")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    """
    Run the command line.

    Returns:
        0 on success, 1 for usage or configuration errors, 2 for data
        errors, 3 for teacher transport errors.

    """
    try:
        args = build_parser().parse_args(argv)
        setup_logging(verbose=getattr(args, "verbose", False))
        settings = settings_from_args(args)
        handler: Callable[..., Any] = args.handler
        return asyncio.run(handler(args, settings))
    except UsageError as exc:
        sys.stderr.write(f"rerank-distill: error: {exc.message}\n")
        return exc.exit_code
    except DistillError as exc:
        _LOGGER.error("%s", exc)  # noqa: TRY400
        sys.stderr.write(f"rerank-distill: {exc.message}\n")
        return exc.exit_code
