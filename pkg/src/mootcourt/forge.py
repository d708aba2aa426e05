"""Synthetic case generation with a rejection-sampling quality gate.

Loop per accepted case: sample statute articles, generate a three-section
case (facts, indictment, pleadings), vet it on four boolean gates, retry
with a fresh article sample on rejection. Rejections are kept for audit;
only all-true verdicts persist a case.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .corpus import CATEGORY_CRIMINAL, CorpusStore, LawArticle
from .errors import (
    EvaluationFormatError,
    ForgeExhaustedError,
    GenerationFormatError,
    InsufficientCorpusError,
    StructuredReplyError,
)
from .gateway import ChatAgent
from .prompts import case_generation_messages, case_vetting_messages

CATEGORY_CIVIL = "civil"
CATEGORY_ADMINISTRATIVE = "administrative"
CASE_CATEGORIES = (CATEGORY_CRIMINAL, CATEGORY_CIVIL, CATEGORY_ADMINISTRATIVE)

ORIGIN_GENERATED = "generated"
ORIGIN_INGESTED = "ingested"

ARTICLES_PER_CASE = (2, 5)


@dataclass
class LegalCase:
    case_id: str
    facts: str
    indictment: str
    plea: str
    gold_articles: list[str]
    category: str
    origin: str = ORIGIN_GENERATED
    gold_judgment: str | None = None

    def validate(self) -> None:
        for name in ("facts", "indictment", "plea"):
            if not getattr(self, name).strip():
                raise ValueError(f"{name} must be non-empty")
        if not self.gold_articles:
            raise ValueError("gold_articles must be non-empty")
        if self.category not in CASE_CATEGORIES:
            raise ValueError(f"category must be one of {CASE_CATEGORIES}, "
                             f"got {self.category!r}")
        if self.origin == ORIGIN_GENERATED and self.gold_judgment is not None:
            raise ValueError("generated cases carry no gold judgment")

    def to_json(self) -> dict:
        data = {"case_id": self.case_id, "facts": self.facts,
                "indictment": self.indictment, "plea": self.plea,
                "gold_articles": list(self.gold_articles),
                "category": self.category, "origin": self.origin}
        if self.gold_judgment is not None:
            data["gold_judgment"] = self.gold_judgment
        return data

    @classmethod
    def from_json(cls, data: dict) -> "LegalCase":
        case = cls(case_id=data["case_id"], facts=data["facts"],
                   indictment=data["indictment"], plea=data["plea"],
                   gold_articles=list(data["gold_articles"]),
                   category=data["category"],
                   origin=data.get("origin", ORIGIN_GENERATED),
                   gold_judgment=data.get("gold_judgment"))
        case.validate()
        return case


@dataclass
class QualityVerdict:
    correctness: bool
    reality: bool
    rationality: bool
    complexity_pass: bool
    rationale: str

    @property
    def accepted(self) -> bool:
        return (self.correctness and self.reality and self.rationality
                and self.complexity_pass)

    def to_json(self) -> dict:
        return {"correctness": self.correctness, "reality": self.reality,
                "rationality": self.rationality,
                "complexity_pass": self.complexity_pass,
                "rationale": self.rationale}


@dataclass
class ForgeStats:
    attempts: int = 0
    accepted: int = 0
    rejected: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0

    def to_json(self) -> dict:
        return {"attempts": self.attempts, "accepted": self.accepted,
                "rejected": self.rejected,
                "acceptance_rate": self.acceptance_rate}


@dataclass
class ForgeResult:
    cases: list[LegalCase]
    stats: ForgeStats
    rejections: list[dict] = field(default_factory=list)
    verdicts: dict[str, QualityVerdict] = field(default_factory=dict)


def _infer_category(articles: list[LawArticle]) -> str:
    categories = {a.category for a in articles}
    if len(categories) != 1:
        raise ValueError(f"articles span categories {sorted(categories)}; "
                         "one case draws from one category")
    return CATEGORY_CRIMINAL if articles[0].category == CATEGORY_CRIMINAL \
        else CATEGORY_CIVIL


def generate_case(articles: list[LawArticle], agent: ChatAgent,
                  case_id: str) -> LegalCase:
    """One unvetted case from 2-5 statute articles; the reply must carry all
    three text sections."""
    if not 2 <= len(articles) <= 5:
        raise ValueError(f"need 2 to 5 articles, got {len(articles)}")
    category = _infer_category(articles)

    def has_sections(obj: dict) -> None:
        for key in ("facts", "indictment", "plea"):
            if not isinstance(obj.get(key), str) or not obj[key].strip():
                raise ValueError(f"missing or empty section {key!r}")

    try:
        obj = agent.chat_object(case_generation_messages(articles),
                                validate=has_sections)
    except StructuredReplyError as exc:
        raise GenerationFormatError(str(exc)) from exc
    case = LegalCase(case_id=case_id, facts=obj["facts"],
                     indictment=obj["indictment"], plea=obj["plea"],
                     gold_articles=[a.article_id for a in articles],
                     category=category)
    case.validate()
    return case


def vet_case(case: LegalCase, agent: ChatAgent) -> QualityVerdict:
    """Four-gate quality verdict; the case passes only if all gates are true."""

    def is_verdict(obj: dict) -> None:
        for key in ("correctness", "reality", "rationality", "complexity_pass"):
            if not isinstance(obj.get(key), bool):
                raise ValueError(f"missing or non-boolean gate {key!r}")
        if not isinstance(obj.get("rationale"), str):
            raise ValueError("missing rationale")

    try:
        obj = agent.chat_object(
            case_vetting_messages(case.facts, case.indictment, case.plea),
            validate=is_verdict)
    except StructuredReplyError as exc:
        raise EvaluationFormatError(str(exc)) from exc
    return QualityVerdict(correctness=obj["correctness"], reality=obj["reality"],
                          rationality=obj["rationality"],
                          complexity_pass=obj["complexity_pass"],
                          rationale=obj["rationale"])


def forge_batch(store: CorpusStore, generator: ChatAgent, vetter: ChatAgent,
                n_target: int, max_attempts_per_case: int = 5, seed: int = 0,
                articles_per_case: tuple[int, int] = ARTICLES_PER_CASE,
                category: str | None = None) -> ForgeResult:
    """Up to n_target accepted cases within n_target * max_attempts_per_case
    attempts. Zero acceptances after the full budget is an error; a partial
    batch is returned with its statistics."""
    if n_target <= 0:
        raise ValueError("n_target must be positive")
    if max_attempts_per_case <= 0:
        raise ValueError("max_attempts_per_case must be positive")
    low, high = articles_per_case
    if not 2 <= low <= high <= 5:
        raise ValueError("articles_per_case must lie within [2, 5]")

    rng = random.Random(seed)
    available = _eligible_categories(store, low, category)
    budget = n_target * max_attempts_per_case
    result = ForgeResult(cases=[], stats=ForgeStats())
    while result.stats.accepted < n_target and result.stats.attempts < budget:
        attempt_index = result.stats.attempts
        result.stats.attempts += 1
        case_id = f"gen-{seed}-{attempt_index:05d}"
        cat = available[rng.randrange(len(available))]
        n_articles = rng.randint(low, min(high, store_count(store, cat)))
        sample_seed = rng.randrange(2**32)
        articles = store.sample_articles(n_articles, category=cat, seed=sample_seed)
        case = generate_case(articles, generator, case_id=case_id)
        verdict = vet_case(case, vetter)
        if verdict.accepted:
            result.cases.append(case)
            result.verdicts[case.case_id] = verdict
            result.stats.accepted += 1
        else:
            result.stats.rejected += 1
            result.rejections.append({"case_attempt_id": case_id,
                                      "verdict": verdict.to_json(),
                                      "rationale": verdict.rationale})
    if result.stats.accepted == 0:
        raise ForgeExhaustedError(
            f"no case accepted in {result.stats.attempts} attempts",
            stats=result.stats)
    return result


def store_count(store: CorpusStore, category: str) -> int:
    return len(store.articles(category))


def _eligible_categories(store: CorpusStore, minimum: int,
                         category: str | None) -> list[str]:
    if category is not None:
        if store_count(store, category) < minimum:
            raise InsufficientCorpusError(
                f"category {category!r} has fewer than {minimum} articles")
        return [category]
    eligible = [c for c in sorted({a.category for a in store.articles()})
                if store_count(store, c) >= minimum]
    if not eligible:
        raise InsufficientCorpusError(
            f"no article category holds at least {minimum} articles")
    return eligible
