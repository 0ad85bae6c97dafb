"""Constants for the rerank_distill toolkit."""

PACKAGE = "rerank_distill"

CONF_TEACHER = "teacher"
CONF_ENDPOINTS = "endpoints"
CONF_BASE_URL = "base_url"
CONF_MODEL = "model"
CONF_API_KEY_ENV = "api_key_env"
CONF_TIMEOUT_MS = "timeout_ms"
CONF_MAX_RETRIES = "max_retries"
CONF_TEMPERATURE = "temperature"
CONF_BACKOFF_SECONDS = "backoff_seconds"

CONF_JUDGE = "judge"
CONF_MODE = "mode"
CONF_VOTES = "votes"
CONF_PARSE_RETRIES = "parse_retries"
CONF_ROUND_ROBIN_MAX = "round_robin_max"
CONF_SAMPLED_K = "sampled_k"
CONF_VOTE_TEMPERATURE = "vote_temperature"

CONF_ELO = "elo"
CONF_PRIOR_STRENGTH = "prior_strength"
CONF_TOLERANCE = "tolerance"
CONF_MAX_ITERATIONS = "max_iterations"
CONF_NORMALIZATION = "normalization"
CONF_TAU = "tau"

CONF_FILTER = "filter"
CONF_EASY_RATE = "easy_rate"
CONF_MARGIN = "margin"
CONF_HARD_GAP = "hard_gap"
CONF_GLOBAL_QUOTA = "global_quota"
CONF_REQUIRE_VERIFIER = "require_verifier"

CONF_DIALOGUE = "dialogue"
CONF_TOKEN_BUDGET = "token_budget"
CONF_N_NEG = "n_neg"
CONF_SOFT_LABELS = "soft_labels"
CONF_INSTRUCTIONS = "instructions"

CONF_EVALUATE = "evaluate"
CONF_CUTOFFS = "cutoffs"

CONF_CALIBRATE = "calibrate"
CONF_BINS = "bins"
CONF_GRID_STEP = "grid_step"

CONF_RUNTIME = "runtime"
CONF_SEED = "seed"
CONF_CACHE_DIR = "cache_dir"
CONF_MAX_IN_FLIGHT = "max_in_flight"
CONF_JOBS = "jobs"
CONF_MOCK_TEACHER = "mock_teacher"

DEFAULT_BASE_URL = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4o-mini"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"
DEFAULT_TIMEOUT_MS = 60_000
DEFAULT_MAX_RETRIES = 3
DEFAULT_TEMPERATURE = 0.0
DEFAULT_VOTING_TEMPERATURE = 0.7
DEFAULT_BACKOFF_SECONDS = 1.0
DEFAULT_MAX_BACKOFF_SECONDS = 30.0
DEFAULT_BREAKER_THRESHOLD = 5
DEFAULT_BREAKER_COOLDOWN = 60.0
BODY_EXCERPT_CHARS = 200
DEFAULT_MAX_IN_FLIGHT = 8
DEFAULT_JOBS = 1
DEFAULT_SEED = 0
DEFAULT_CACHE_DIR = ".judgment_cache"

JUDGE_MODE_LISTWISE = "listwise"
JUDGE_MODE_PAIRWISE = "pairwise"
DEFAULT_VOTES = 3
DEFAULT_PARSE_RETRIES = 2
DEFAULT_ROUND_ROBIN_MAX = 32
DEFAULT_SAMPLED_K = 3

NORMALIZATION_LOGISTIC = "per_query_logistic"
NORMALIZATION_MINMAX = "per_query_minmax"
DEFAULT_PRIOR_STRENGTH = 0.1
DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 1000
DEFAULT_TAU = 1.0

BAND_EDGES = (0.2, 0.4, 0.6, 0.8)
BAND_LABELS = {
    1: "irrelevant",
    2: "low relevance",
    3: "partially relevant",
    4: "highly relevant",
    5: "direct answer",
}

DEFAULT_HARD_GAP = 0.2
DEFAULT_EASY_RATE = 0.2
DEFAULT_MARGIN = 0.1

RUBRIC_WEIGHTS = (0.30, 0.30, 0.25, 0.15)
RUBRIC_FIELDS = ("sr", "ap", "ic", "ad")

DEFAULT_TOKEN_BUDGET = 128
DEFAULT_N_NEG = 7

DEFAULT_CUTOFFS = (1, 3, 5, 10, 20)
CUTOFF_FULL = "full"

DEFAULT_BINS = 10
DEFAULT_GRID_STEP = 0.05

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRANSPORT = 3

FLOAT_DIGITS = 10
