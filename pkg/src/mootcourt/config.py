"""Run configuration: TOML loading, validation, and the config digest that
names a run.

Every constant defaults to the framework's standard settings, so an empty
config file is valid and a config interested in one ablation is a one-line
diff. Unknown keys are rejected; all problems are reported together with
dotted key paths.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

ROLE_NAMES = ("lawyer_plaintiff", "lawyer_defendant", "evaluator", "judge",
              "case_generator", "embedder")

# scoring and judging run cold; generation keeps sampling diversity
GENERATION_TEMPERATURE = 0.7
SCORING_TEMPERATURE = 0.0

_COLD_ROLES = frozenset({"evaluator", "judge", "embedder"})

PROVIDER_KINDS = ("mock", "http")


def _default_temperature(role: str) -> float:
    return SCORING_TEMPERATURE if role in _COLD_ROLES else GENERATION_TEMPERATURE


@dataclass
class RoleConfig:
    """Provider settings for one agent role."""

    provider: str = "mock"
    model_id: str = "mock-model"
    temperature: float = GENERATION_TEMPERATURE
    max_output_tokens: int = 2048
    endpoint_url: str = ""
    api_key_env_var: str = ""
    requests_per_minute: int = 6000
    max_retries: int = 2

    def check(self, path: str, errors: list[str]) -> None:
        if self.provider not in PROVIDER_KINDS:
            errors.append(f"{path}.provider: must be one of "
                          f"{'/'.join(PROVIDER_KINDS)}, got {self.provider!r}")
        if not isinstance(self.model_id, str) or not self.model_id.strip():
            errors.append(f"{path}.model_id: must be a non-empty string")
        if not isinstance(self.temperature, (int, float)) \
                or isinstance(self.temperature, bool) \
                or not 0.0 <= float(self.temperature) <= 2.0:
            errors.append(f"{path}.temperature: must be a number in [0, 2]")
        if not _is_int(self.max_output_tokens) or self.max_output_tokens < 1:
            errors.append(f"{path}.max_output_tokens: must be a positive integer")
        if self.provider == "http" and not self.endpoint_url:
            errors.append(f"{path}.endpoint_url: required for the http provider")
        if not _is_int(self.requests_per_minute) or self.requests_per_minute < 1:
            errors.append(f"{path}.requests_per_minute: must be a positive integer")
        if not _is_int(self.max_retries) or self.max_retries < 0:
            errors.append(f"{path}.max_retries: must be a non-negative integer")

    def to_json(self) -> dict:
        return {"provider": self.provider, "model_id": self.model_id,
                "temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
                "endpoint_url": self.endpoint_url,
                "api_key_env_var": self.api_key_env_var,
                "requests_per_minute": self.requests_per_minute,
                "max_retries": self.max_retries}


@dataclass
class Cutoffs:
    """Retrieval depth settings: lexical candidate pool for precedent search,
    dense cutoff for article search, negative pool for training data."""

    case_bm25_k: int = 100
    article_dense_k: int = 200
    train_neg_k: int = 50

    def check(self, errors: list[str]) -> None:
        for name in ("case_bm25_k", "article_dense_k", "train_neg_k"):
            value = getattr(self, name)
            if not _is_int(value) or value < 1:
                errors.append(f"cutoffs.{name}: must be a positive integer, "
                              f"got {value!r}")

    def to_json(self) -> dict:
        return {"case_bm25_k": self.case_bm25_k,
                "article_dense_k": self.article_dense_k,
                "train_neg_k": self.train_neg_k}


@dataclass
class Ablations:
    no_argument: bool = False
    no_evolution: bool = False
    no_retrieval: bool = False

    def check(self, errors: list[str]) -> None:
        for name in ("no_argument", "no_evolution", "no_retrieval"):
            if not isinstance(getattr(self, name), bool):
                errors.append(f"ablations.{name}: must be a boolean")

    def to_json(self) -> dict:
        return {"no_argument": self.no_argument,
                "no_evolution": self.no_evolution,
                "no_retrieval": self.no_retrieval}


def _default_roles() -> dict[str, RoleConfig]:
    return {role: RoleConfig(model_id=f"mock-{role.replace('_', '-')}",
                             temperature=_default_temperature(role))
            for role in ROLE_NAMES}


@dataclass
class RunConfig:
    """Everything one pipeline run depends on, with stable digest."""

    roles: dict[str, RoleConfig] = field(default_factory=_default_roles)
    rounds: int = 3
    refine_iterations: int = 3
    articles_per_case: tuple[int, int] = (2, 5)
    cutoffs: Cutoffs = field(default_factory=Cutoffs)
    seed: int = 42
    ablations: Ablations = field(default_factory=Ablations)
    n_cases: int = 2
    max_attempts_per_case: int = 5
    article_context_budget: int = 40
    workers: int = 1
    corpus_articles: str = "corpus/articles.jsonl"
    corpus_cases: str = "corpus/cases.jsonl"
    runs_root: str = "runs"
    # directory relative paths resolve against; machine-local, not digested
    base_dir: Path = field(default_factory=Path.cwd)

    def check(self) -> list[str]:
        errors: list[str] = []
        for role in ROLE_NAMES:
            if role not in self.roles:
                errors.append(f"roles.{role}: missing")
        for role, rc in self.roles.items():
            rc.check(f"roles.{role}", errors)
        if not _is_int(self.rounds) or self.rounds < 1:
            errors.append(f"rounds: must be a positive integer, got {self.rounds!r}")
        if not _is_int(self.refine_iterations) or self.refine_iterations < 0:
            errors.append("refine_iterations: must be a non-negative integer, "
                          f"got {self.refine_iterations!r}")
        span = self.articles_per_case
        if (len(span) != 2 or not all(_is_int(v) for v in span)
                or not 2 <= span[0] <= span[1] <= 5):
            errors.append("articles_per_case: must be [low, high] with "
                          f"2 <= low <= high <= 5, got {list(span)!r}")
        self.cutoffs.check(errors)
        if not _is_int(self.seed):
            errors.append(f"seed: must be an integer, got {self.seed!r}")
        self.ablations.check(errors)
        if not _is_int(self.n_cases) or self.n_cases < 1:
            errors.append(f"n_cases: must be a positive integer, got {self.n_cases!r}")
        if not _is_int(self.max_attempts_per_case) or self.max_attempts_per_case < 1:
            errors.append("max_attempts_per_case: must be a positive integer, "
                          f"got {self.max_attempts_per_case!r}")
        if not _is_int(self.article_context_budget) or self.article_context_budget < 1:
            errors.append("article_context_budget: must be a positive integer, "
                          f"got {self.article_context_budget!r}")
        if not _is_int(self.workers) or self.workers < 1:
            errors.append(f"workers: must be a positive integer, got {self.workers!r}")
        for name in ("corpus_articles", "corpus_cases", "runs_root"):
            if not isinstance(getattr(self, name), str) or not getattr(self, name):
                errors.append(f"{_file_key(name)}: must be a non-empty path string")
        return errors

    def validate(self) -> None:
        errors = self.check()
        if errors:
            raise ConfigError(errors)

    # -- path resolution (machine-local) --

    def resolve(self, path: str | Path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    @property
    def corpus_articles_path(self) -> Path:
        return self.resolve(self.corpus_articles)

    @property
    def corpus_cases_path(self) -> Path:
        return self.resolve(self.corpus_cases)

    @property
    def runs_root_path(self) -> Path:
        return self.resolve(self.runs_root)

    # -- identity --

    def effective(self) -> dict:
        """The complete settings dict, defaults filled in."""
        return {
            "roles": {role: self.roles[role].to_json()
                      for role in sorted(self.roles)},
            "rounds": self.rounds,
            "refine_iterations": self.refine_iterations,
            "articles_per_case": list(self.articles_per_case),
            "cutoffs": self.cutoffs.to_json(),
            "seed": self.seed,
            "ablations": self.ablations.to_json(),
            "n_cases": self.n_cases,
            "max_attempts_per_case": self.max_attempts_per_case,
            "article_context_budget": self.article_context_budget,
            "workers": self.workers,
            "corpus": {"articles": self.corpus_articles,
                       "cases": self.corpus_cases},
            "runs_root": self.runs_root,
        }

    def digest(self) -> str:
        canonical = json.dumps(self.effective(), sort_keys=True,
                               ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @property
    def run_id(self) -> str:
        return f"run-{self.digest()[:12]}"

    def all_mock(self) -> bool:
        return all(rc.provider == "mock" for rc in self.roles.values())


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _file_key(field_name: str) -> str:
    return {"corpus_articles": "corpus.articles",
            "corpus_cases": "corpus.cases"}.get(field_name, field_name)


_TOP_LEVEL_KEYS = {"rounds", "refine_iterations", "articles_per_case", "seed",
                   "n_cases", "max_attempts_per_case",
                   "article_context_budget", "workers", "runs_root",
                   "roles", "cutoffs", "ablations", "corpus"}
_ROLE_KEYS = {"provider", "model_id", "temperature", "max_output_tokens",
              "endpoint_url", "api_key_env_var", "requests_per_minute",
              "max_retries"}
_CORPUS_KEYS = {"articles", "cases"}


def _apply_flat(target, data: dict, known: set[str], prefix: str,
                errors: list[str]) -> None:
    for key, value in data.items():
        if key not in known:
            errors.append(f"{prefix}{key}: unknown key")
            continue
        setattr(target, key, value)


def parse_config(data: dict, base_dir: Path | None = None) -> RunConfig:
    """RunConfig from a parsed TOML document; raises ConfigError listing
    every unknown key, type problem, and invariant violation at once."""
    errors: list[str] = []
    config = RunConfig()
    if base_dir is not None:
        config.base_dir = Path(base_dir)

    for key in data:
        if key not in _TOP_LEVEL_KEYS:
            errors.append(f"{key}: unknown key")

    for key in ("rounds", "refine_iterations", "seed", "n_cases",
                "max_attempts_per_case", "article_context_budget", "workers",
                "runs_root"):
        if key in data:
            setattr(config, key, data[key])
    if "articles_per_case" in data:
        value = data["articles_per_case"]
        if isinstance(value, list):
            config.articles_per_case = tuple(value)
        else:
            errors.append("articles_per_case: must be a two-element list")

    roles = data.get("roles", {})
    if not isinstance(roles, dict):
        errors.append("roles: must be a table of role sections")
        roles = {}
    for role, section in roles.items():
        if role not in ROLE_NAMES:
            errors.append(f"roles.{role}: unknown role (expected one of "
                          f"{', '.join(ROLE_NAMES)})")
            continue
        if not isinstance(section, dict):
            errors.append(f"roles.{role}: must be a table")
            continue
        _apply_flat(config.roles[role], section, _ROLE_KEYS,
                    f"roles.{role}.", errors)

    cutoffs = data.get("cutoffs", {})
    if not isinstance(cutoffs, dict):
        errors.append("cutoffs: must be a table")
    else:
        _apply_flat(config.cutoffs, cutoffs,
                    {"case_bm25_k", "article_dense_k", "train_neg_k"},
                    "cutoffs.", errors)

    ablations = data.get("ablations", {})
    if not isinstance(ablations, dict):
        errors.append("ablations: must be a table")
    else:
        _apply_flat(config.ablations, ablations,
                    {"no_argument", "no_evolution", "no_retrieval"},
                    "ablations.", errors)

    corpus = data.get("corpus", {})
    if not isinstance(corpus, dict):
        errors.append("corpus: must be a table")
    else:
        for key, value in corpus.items():
            if key not in _CORPUS_KEYS:
                errors.append(f"corpus.{key}: unknown key")
            elif key == "articles":
                config.corpus_articles = value
            else:
                config.corpus_cases = value

    errors.extend(config.check())
    if errors:
        raise ConfigError(errors)
    return config


def validate_config(path: str | Path | None = None) -> RunConfig:
    """Load and validate a TOML config file; None gives pure defaults."""
    if path is None:
        return parse_config({})
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"config file is not valid TOML: {exc}"]) from exc
    return parse_config(data, base_dir=path.resolve().parent)
