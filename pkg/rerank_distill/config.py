"""
Configuration loading.

The configuration is a single YAML document with one section per stage,
validated by voluptuous schemas that also supply every default. Command-line
flags are applied on top as dotted overrides, so the precedence is flags,
then the file, then the defaults in :mod:`rerank_distill.const`.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any

import voluptuous as vol
import yaml

from .const import (
    CONF_API_KEY_ENV,
    CONF_BACKOFF_SECONDS,
    CONF_BASE_URL,
    CONF_BINS,
    CONF_CACHE_DIR,
    CONF_CALIBRATE,
    CONF_CUTOFFS,
    CONF_DIALOGUE,
    CONF_EASY_RATE,
    CONF_ELO,
    CONF_ENDPOINTS,
    CONF_EVALUATE,
    CONF_FILTER,
    CONF_GLOBAL_QUOTA,
    CONF_GRID_STEP,
    CONF_HARD_GAP,
    CONF_INSTRUCTIONS,
    CONF_JOBS,
    CONF_JUDGE,
    CONF_MARGIN,
    CONF_MAX_IN_FLIGHT,
    CONF_MAX_ITERATIONS,
    CONF_MAX_RETRIES,
    CONF_MOCK_TEACHER,
    CONF_MODE,
    CONF_MODEL,
    CONF_N_NEG,
    CONF_NORMALIZATION,
    CONF_PARSE_RETRIES,
    CONF_PRIOR_STRENGTH,
    CONF_REQUIRE_VERIFIER,
    CONF_ROUND_ROBIN_MAX,
    CONF_RUNTIME,
    CONF_SAMPLED_K,
    CONF_SEED,
    CONF_SOFT_LABELS,
    CONF_TAU,
    CONF_TEACHER,
    CONF_TEMPERATURE,
    CONF_TIMEOUT_MS,
    CONF_TOKEN_BUDGET,
    CONF_TOLERANCE,
    CONF_VOTE_TEMPERATURE,
    CONF_VOTES,
    DEFAULT_API_KEY_ENV,
    DEFAULT_BACKOFF_SECONDS,
    DEFAULT_BASE_URL,
    DEFAULT_BINS,
    DEFAULT_CACHE_DIR,
    DEFAULT_CUTOFFS,
    DEFAULT_EASY_RATE,
    DEFAULT_GRID_STEP,
    DEFAULT_HARD_GAP,
    DEFAULT_JOBS,
    DEFAULT_MARGIN,
    DEFAULT_MAX_IN_FLIGHT,
    DEFAULT_MAX_ITERATIONS,
    DEFAULT_MAX_RETRIES,
    DEFAULT_MODEL,
    DEFAULT_N_NEG,
    DEFAULT_PARSE_RETRIES,
    DEFAULT_PRIOR_STRENGTH,
    DEFAULT_ROUND_ROBIN_MAX,
    DEFAULT_SAMPLED_K,
    DEFAULT_SEED,
    DEFAULT_TAU,
    DEFAULT_TEMPERATURE,
    DEFAULT_TIMEOUT_MS,
    DEFAULT_TOKEN_BUDGET,
    DEFAULT_TOLERANCE,
    DEFAULT_VOTES,
    DEFAULT_VOTING_TEMPERATURE,
    JUDGE_MODE_LISTWISE,
    JUDGE_MODE_PAIRWISE,
    NORMALIZATION_LOGISTIC,
    NORMALIZATION_MINMAX,
)
from .context_logger import ContextLogger
from .dialogue_builder import DialogueConfig
from .elo_fit import BTFitConfig
from .exceptions import ConfigurationError
from .judge_orchestrator import JudgeConfig
from .metrics import CutoffSet
from .negative_filter import FilterConfig
from .teacher_client import TeacherEndpoint

if TYPE_CHECKING:
    from collections.abc import Mapping

_LOGGER = logging.getLogger(__name__)

_POSITIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=1))
_NONNEGATIVE_INT = vol.All(vol.Coerce(int), vol.Range(min=0))
_NONNEGATIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0))
_POSITIVE_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, min_included=False))
_UNIT_FLOAT = vol.All(vol.Coerce(float), vol.Range(min=0, max=1))

ENDPOINT_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_BASE_URL, default=DEFAULT_BASE_URL): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_MODEL, default=DEFAULT_MODEL): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_API_KEY_ENV, default=DEFAULT_API_KEY_ENV): str,
        vol.Optional(CONF_TIMEOUT_MS, default=DEFAULT_TIMEOUT_MS): _POSITIVE_INT,
        vol.Optional(CONF_MAX_RETRIES, default=DEFAULT_MAX_RETRIES): _NONNEGATIVE_INT,
        vol.Optional(CONF_TEMPERATURE, default=DEFAULT_TEMPERATURE): _NONNEGATIVE_FLOAT,
        vol.Optional(CONF_BACKOFF_SECONDS, default=DEFAULT_BACKOFF_SECONDS): _NONNEGATIVE_FLOAT,
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_TEACHER, default={}): {
            vol.Optional(CONF_ENDPOINTS, default=[{}]): vol.All(
                [ENDPOINT_SCHEMA], vol.Length(min=1)
            ),
        },
        vol.Optional(CONF_JUDGE, default={}): {
            vol.Optional(CONF_MODE, default=JUDGE_MODE_PAIRWISE): vol.In(
                [JUDGE_MODE_PAIRWISE, JUDGE_MODE_LISTWISE]
            ),
            vol.Optional(CONF_VOTES, default=DEFAULT_VOTES): _POSITIVE_INT,
            vol.Optional(CONF_PARSE_RETRIES, default=DEFAULT_PARSE_RETRIES): _NONNEGATIVE_INT,
            vol.Optional(
                CONF_VOTE_TEMPERATURE, default=DEFAULT_VOTING_TEMPERATURE
            ): _NONNEGATIVE_FLOAT,
            vol.Optional(CONF_ROUND_ROBIN_MAX, default=DEFAULT_ROUND_ROBIN_MAX): _POSITIVE_INT,
            vol.Optional(CONF_SAMPLED_K, default=DEFAULT_SAMPLED_K): _POSITIVE_INT,
        },
        vol.Optional(CONF_ELO, default={}): {
            vol.Optional(CONF_PRIOR_STRENGTH, default=DEFAULT_PRIOR_STRENGTH): _NONNEGATIVE_FLOAT,
            vol.Optional(CONF_TOLERANCE, default=DEFAULT_TOLERANCE): _POSITIVE_FLOAT,
            vol.Optional(CONF_MAX_ITERATIONS, default=DEFAULT_MAX_ITERATIONS): _POSITIVE_INT,
            vol.Optional(CONF_NORMALIZATION, default=NORMALIZATION_LOGISTIC): vol.In(
                [NORMALIZATION_LOGISTIC, NORMALIZATION_MINMAX]
            ),
            vol.Optional(CONF_TAU, default=DEFAULT_TAU): _POSITIVE_FLOAT,
        },
        vol.Optional(CONF_FILTER, default={}): {
            vol.Optional(CONF_HARD_GAP, default=DEFAULT_HARD_GAP): _POSITIVE_FLOAT,
            vol.Optional(CONF_EASY_RATE, default=DEFAULT_EASY_RATE): _UNIT_FLOAT,
            vol.Optional(CONF_MARGIN, default=DEFAULT_MARGIN): _NONNEGATIVE_FLOAT,
            vol.Optional(CONF_GLOBAL_QUOTA, default=False): vol.Boolean(),
            vol.Optional(CONF_REQUIRE_VERIFIER, default=False): vol.Boolean(),
        },
        vol.Optional(CONF_DIALOGUE, default={}): {
            vol.Optional(CONF_TOKEN_BUDGET, default=DEFAULT_TOKEN_BUDGET): _POSITIVE_INT,
            vol.Optional(CONF_N_NEG, default=DEFAULT_N_NEG): _POSITIVE_INT,
            vol.Optional(CONF_SOFT_LABELS, default=False): vol.Boolean(),
            vol.Optional(CONF_INSTRUCTIONS, default=True): vol.Boolean(),
        },
        vol.Optional(CONF_EVALUATE, default={}): {
            vol.Optional(CONF_CUTOFFS, default=list(DEFAULT_CUTOFFS)): vol.All(
                [_POSITIVE_INT], vol.Length(min=1)
            ),
        },
        vol.Optional(CONF_CALIBRATE, default={}): {
            vol.Optional(CONF_BINS, default=DEFAULT_BINS): _POSITIVE_INT,
            vol.Optional(CONF_GRID_STEP, default=DEFAULT_GRID_STEP): vol.All(
                vol.Coerce(float), vol.Range(min=0, max=1, min_included=False, max_included=False)
            ),
        },
        vol.Optional(CONF_RUNTIME, default={}): {
            vol.Optional(CONF_SEED, default=DEFAULT_SEED): vol.Coerce(int),
            vol.Optional(CONF_CACHE_DIR, default=DEFAULT_CACHE_DIR): str,
            vol.Optional(CONF_MAX_IN_FLIGHT, default=DEFAULT_MAX_IN_FLIGHT): _POSITIVE_INT,
            vol.Optional(CONF_JOBS, default=DEFAULT_JOBS): _POSITIVE_INT,
            vol.Optional(CONF_MOCK_TEACHER, default=False): vol.Boolean(),
        },
    },
    extra=vol.PREVENT_EXTRA,
)

HASH_EXCLUDED = (
    (CONF_RUNTIME, CONF_CACHE_DIR),
    (CONF_RUNTIME, CONF_MAX_IN_FLIGHT),
    (CONF_RUNTIME, CONF_JOBS),
)


def validate_config(raw: Mapping[str, Any]) -> dict[str, Any]:
    """
    Validate a raw configuration and fill in defaults.

    Raises:
        ConfigurationError: Naming the offending key path.

    """
    try:
        return CONFIG_SCHEMA(copy.deepcopy(dict(raw)))
    except vol.Invalid as exc:
        path = ".".join(str(part) for part in exc.path)
        msg = f"Invalid configuration at '{path or '<root>'}': {exc.msg}"
        raise ConfigurationError(msg, details={"path": path}) from exc


def load_config(path: str | Path | None = None) -> dict[str, Any]:
    """
    Load and validate a YAML configuration; no path gives the defaults.

    Raises:
        ConfigurationError: If the file is missing, not YAML, or invalid.

    """
    if path is None:
        return validate_config({})
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        msg = f"Cannot read config file {path}"
        raise ConfigurationError(msg, details={"path": str(path), "error": str(exc)}) from exc
    except yaml.YAMLError as exc:
        msg = f"Config file {path} is not valid YAML"
        raise ConfigurationError(msg, details={"path": str(path), "error": str(exc)}) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        msg = "Config file must contain a mapping of sections"
        raise ConfigurationError(msg, details={"path": str(path)})
    return validate_config(raw)


def apply_overrides(config: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    """
    Apply dotted ``section.key`` overrides; None values are ignored.

    Raises:
        ConfigurationError: If an override is invalid.

    """
    merged = copy.deepcopy(dict(config))
    for dotted, value in overrides.items():
        if value is None:
            continue
        section, _, key = dotted.partition(".")
        merged.setdefault(section, {})[key] = value
    return validate_config(merged)


def config_hash(config: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON of ``config`` without run-local settings."""
    hashed = copy.deepcopy(dict(config))
    for section, key in HASH_EXCLUDED:
        hashed.get(section, {}).pop(key, None)
    canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True, slots=True)
class Settings:
    """Typed view of a validated configuration."""

    data: Mapping[str, Any]

    @classmethod
    def from_sources(
        cls, path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
    ) -> Settings:
        """Load ``path`` and apply flag overrides on top."""
        logger = ContextLogger(_LOGGER, "config").new_operation("load")
        config = load_config(path)
        if overrides:
            config = apply_overrides(config, overrides)
        logger.debug("Configuration loaded", path=str(path) if path else None)
        return cls(config)

    @property
    def seed(self) -> int:
        """Return the run seed."""
        return int(self.data[CONF_RUNTIME][CONF_SEED])

    @property
    def cache_dir(self) -> str:
        """Return the judgment cache directory."""
        return str(self.data[CONF_RUNTIME][CONF_CACHE_DIR])

    @property
    def max_in_flight(self) -> int:
        """Return the bound on concurrent teacher requests."""
        return int(self.data[CONF_RUNTIME][CONF_MAX_IN_FLIGHT])

    @property
    def jobs(self) -> int:
        """Return how many queries or dialogues a stage processes concurrently."""
        return int(self.data[CONF_RUNTIME][CONF_JOBS])

    @property
    def mock_teacher(self) -> bool:
        """Return whether the offline mock judge replaces the teacher."""
        return bool(self.data[CONF_RUNTIME][CONF_MOCK_TEACHER])

    @property
    def hash(self) -> str:
        """Return the configuration hash recorded in manifests."""
        return config_hash(self.data)

    def endpoints(self) -> list[TeacherEndpoint]:
        """Return the configured teacher endpoints."""
        return [
            TeacherEndpoint(
                base_url=entry[CONF_BASE_URL],
                model_name=entry[CONF_MODEL],
                api_key_ref=entry[CONF_API_KEY_ENV],
                timeout_ms=entry[CONF_TIMEOUT_MS],
                max_retries=entry[CONF_MAX_RETRIES],
                temperature=entry[CONF_TEMPERATURE],
                backoff_seconds=entry[CONF_BACKOFF_SECONDS],
            )
            for entry in self.data[CONF_TEACHER][CONF_ENDPOINTS]
        ]

    def judge(self, *, mode: str | None = None) -> JudgeConfig:
        """Return judging settings, optionally forcing a mode."""
        section = self.data[CONF_JUDGE]
        return JudgeConfig(
            mode=mode or section[CONF_MODE],
            votes=section[CONF_VOTES],
            parse_retries=section[CONF_PARSE_RETRIES],
            vote_temperature=section[CONF_VOTE_TEMPERATURE],
            round_robin_max=section[CONF_ROUND_ROBIN_MAX],
            sampled_k=section[CONF_SAMPLED_K],
            seed=self.seed,
        )

    def fit(self) -> BTFitConfig:
        """Return Bradley-Terry settings."""
        section = self.data[CONF_ELO]
        return BTFitConfig(
            prior_strength=section[CONF_PRIOR_STRENGTH],
            tolerance=section[CONF_TOLERANCE],
            max_iterations=section[CONF_MAX_ITERATIONS],
            normalization=section[CONF_NORMALIZATION],
            tau=section[CONF_TAU],
        )

    def filter(self) -> FilterConfig:
        """Return negative-filter settings."""
        section = self.data[CONF_FILTER]
        return FilterConfig(
            hard_gap=section[CONF_HARD_GAP],
            easy_rate=section[CONF_EASY_RATE],
            margin=section[CONF_MARGIN],
            global_quota=section[CONF_GLOBAL_QUOTA],
            require_verifier=section[CONF_REQUIRE_VERIFIER],
            seed=self.seed,
        )

    def dialogue(self) -> DialogueConfig:
        """Return dialogue-stage settings."""
        section = self.data[CONF_DIALOGUE]
        return DialogueConfig(
            token_budget=section[CONF_TOKEN_BUDGET],
            n_neg=section[CONF_N_NEG],
            soft_labels=section[CONF_SOFT_LABELS],
            instructions=section[CONF_INSTRUCTIONS],
            seed=self.seed,
            filter=self.filter(),
        )

    def cutoffs(self) -> CutoffSet:
        """Return evaluation cutoffs."""
        return CutoffSet(tuple(self.data[CONF_EVALUATE][CONF_CUTOFFS]))

    @property
    def bins(self) -> int:
        """Return the histogram bin count."""
        return int(self.data[CONF_CALIBRATE][CONF_BINS])

    @property
    def grid_step(self) -> float:
        """Return the threshold-sweep grid step."""
        return float(self.data[CONF_CALIBRATE][CONF_GRID_STEP])
