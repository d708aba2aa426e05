"""Statute-article and case corpora: ingest, validate, redact, serve by id.

Storage is a plain JSONL segment file per corpus under a root directory, with
an in-memory index rebuilt at open. Ingest is atomic per input file: every
line is validated (and redacted) before anything is committed.
"""

from __future__ import annotations

import random
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateIdError, IngestError, InsufficientCorpusError
from .jsonio import iter_jsonl, write_jsonl

CATEGORY_CRIMINAL = "criminal"
CATEGORY_CIVIL_ADMIN = "civil_admin"
ARTICLE_CATEGORIES = (CATEGORY_CRIMINAL, CATEGORY_CIVIL_ADMIN)

STAGE_FIRST = "first_instance"
STAGE_SECOND = "second_instance"
CASE_STAGES = (STAGE_FIRST, STAGE_SECOND)

_BACKREF_RE = re.compile(r"\\(\d+)|\\g<([^>]+)>")


@dataclass(frozen=True)
class LawArticle:
    article_id: str
    statute_name: str
    article_number: int
    body: str
    category: str

    def validate(self) -> None:
        if not self.article_id:
            raise ValueError("article_id must be non-empty")
        if not isinstance(self.article_number, int) or isinstance(self.article_number, bool) \
                or self.article_number <= 0:
            raise ValueError("article_number must be a positive integer")
        if not self.body.strip():
            raise ValueError("body must be non-empty")
        if self.category not in ARTICLE_CATEGORIES:
            raise ValueError(f"category must be one of {ARTICLE_CATEGORIES}, "
                             f"got {self.category!r}")

    def to_json(self) -> dict:
        return {"article_id": self.article_id, "statute_name": self.statute_name,
                "article_number": self.article_number, "body": self.body,
                "category": self.category}


@dataclass(frozen=True)
class CorpusCase:
    case_id: str
    case_name: str
    action_cause: str
    stage: str
    relevant_articles: tuple[str, ...]
    full_text: str

    def validate(self) -> None:
        if not self.case_id:
            raise ValueError("case_id must be non-empty")
        if self.stage not in CASE_STAGES:
            raise ValueError(f"stage must be one of {CASE_STAGES}, got {self.stage!r}")
        if not self.full_text.strip():
            raise ValueError("full_text must be non-empty")
        for a in self.relevant_articles:
            if not isinstance(a, str) or not a:
                raise ValueError("relevant_articles entries must be non-empty strings")

    def to_json(self) -> dict:
        return {"case_id": self.case_id, "case_name": self.case_name,
                "action_cause": self.action_cause, "stage": self.stage,
                "relevant_articles": list(self.relevant_articles),
                "full_text": self.full_text}


@dataclass(frozen=True)
class RedactionRule:
    pattern: str
    replacement: str
    compiled: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            compiled = re.compile(self.pattern)
        except re.error as exc:
            raise ValueError(f"pattern does not compile: {exc}") from exc
        for m in _BACKREF_RE.finditer(self.replacement):
            if m.group(1) is not None:
                if int(m.group(1)) > compiled.groups:
                    raise ValueError(
                        f"replacement references group {m.group(1)} but pattern "
                        f"defines only {compiled.groups}")
            elif m.group(2) not in compiled.groupindex and not m.group(2).isdigit():
                raise ValueError(f"replacement references unknown group {m.group(2)!r}")
        object.__setattr__(self, "compiled", compiled)

    def apply(self, text: str) -> str:
        return self.compiled.sub(self.replacement, text)


def apply_redactions(text: str, rules: list[RedactionRule]) -> str:
    for rule in rules:
        text = rule.apply(text)
    return text


def load_redaction_rules(path: str | Path) -> list[RedactionRule]:
    rules = []
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj, dict) or set(obj) != {"pattern", "replacement"}:
            raise IngestError(
                f"line {lineno}: redaction rule must have exactly "
                "pattern and replacement", line_number=lineno)
        try:
            rules.append(RedactionRule(obj["pattern"], obj["replacement"]))
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}", line_number=lineno) from exc
    return rules


_ARTICLE_FIELDS = {"article_id", "statute_name", "article_number", "body", "category"}
_CASE_FIELDS = {"case_id", "case_name", "action_cause", "stage",
                "relevant_articles", "full_text"}


def _parse_article(obj, lineno: int) -> LawArticle:
    if not isinstance(obj, dict):
        raise IngestError(f"line {lineno}: expected an object", line_number=lineno)
    missing = _ARTICLE_FIELDS - set(obj)
    if missing:
        raise IngestError(f"line {lineno}: missing fields {sorted(missing)}",
                          line_number=lineno)
    try:
        article = LawArticle(
            article_id=str(obj["article_id"]), statute_name=str(obj["statute_name"]),
            article_number=obj["article_number"], body=str(obj["body"]),
            category=str(obj["category"]))
        article.validate()
    except (TypeError, ValueError) as exc:
        raise IngestError(f"line {lineno}: {exc}", line_number=lineno) from exc
    return article


def _parse_case(obj, lineno: int) -> CorpusCase:
    if not isinstance(obj, dict):
        raise IngestError(f"line {lineno}: expected an object", line_number=lineno)
    missing = _CASE_FIELDS - set(obj)
    if missing:
        raise IngestError(f"line {lineno}: missing fields {sorted(missing)}",
                          line_number=lineno)
    rel = obj["relevant_articles"]
    if not isinstance(rel, list):
        raise IngestError(f"line {lineno}: relevant_articles must be a list",
                          line_number=lineno)
    try:
        case = CorpusCase(
            case_id=str(obj["case_id"]), case_name=str(obj["case_name"]),
            action_cause=str(obj["action_cause"]), stage=str(obj["stage"]),
            relevant_articles=tuple(rel), full_text=str(obj["full_text"]))
        case.validate()
    except (TypeError, ValueError) as exc:
        raise IngestError(f"line {lineno}: {exc}", line_number=lineno) from exc
    return case


class CorpusStore:
    """Article and case corpora backed by JSONL segments under one root.

    root=None keeps everything in memory (tests). Reads are lock-free after
    ingest returns; ingest itself is single-writer.
    """

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else None
        self._articles: dict[str, LawArticle] = {}
        self._cases: dict[str, CorpusCase] = {}
        self._write_lock = threading.Lock()
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)
            if self._article_segment.exists():
                for lineno, obj in iter_jsonl(self._article_segment):
                    a = _parse_article(obj, lineno)
                    self._articles[a.article_id] = a
            if self._case_segment.exists():
                for lineno, obj in iter_jsonl(self._case_segment):
                    c = _parse_case(obj, lineno)
                    self._cases[c.case_id] = c

    @property
    def _article_segment(self) -> Path:
        return self.root / "articles.jsonl"

    @property
    def _case_segment(self) -> Path:
        return self.root / "cases.jsonl"

    # -- ingest --

    def ingest_articles(self, path: str | Path) -> int:
        with self._write_lock:
            batch: dict[str, LawArticle] = {}
            for lineno, obj in iter_jsonl(path):
                article = _parse_article(obj, lineno)
                if article.article_id in self._articles or article.article_id in batch:
                    raise DuplicateIdError(
                        f"line {lineno}: duplicate article_id {article.article_id!r}",
                        line_number=lineno)
                batch[article.article_id] = article
            self._articles.update(batch)
            if self.root is not None:
                write_jsonl(self._article_segment,
                            (a.to_json() for a in self._articles.values()))
            return len(batch)

    def ingest_cases(self, path: str | Path,
                     rules: list[RedactionRule] | None = None,
                     strict: bool = False) -> int:
        rules = rules or []
        with self._write_lock:
            batch: dict[str, CorpusCase] = {}
            for lineno, obj in iter_jsonl(path):
                case = _parse_case(obj, lineno)
                if case.case_id in self._cases or case.case_id in batch:
                    raise DuplicateIdError(
                        f"line {lineno}: duplicate case_id {case.case_id!r}",
                        line_number=lineno)
                if strict:
                    unknown = [a for a in case.relevant_articles
                               if a not in self._articles]
                    if unknown:
                        raise IngestError(
                            f"line {lineno}: unresolvable article ids {unknown}",
                            line_number=lineno)
                if rules:
                    case = CorpusCase(
                        case_id=case.case_id,
                        case_name=apply_redactions(case.case_name, rules),
                        action_cause=case.action_cause, stage=case.stage,
                        relevant_articles=case.relevant_articles,
                        full_text=apply_redactions(case.full_text, rules))
                batch[case.case_id] = case
            self._cases.update(batch)
            if self.root is not None:
                write_jsonl(self._case_segment,
                            (c.to_json() for c in self._cases.values()))
            return len(batch)

    # -- lookup --

    def get_article(self, article_id: str) -> LawArticle:
        return self._articles[article_id]

    def has_article(self, article_id: str) -> bool:
        return article_id in self._articles

    def get_case(self, case_id: str) -> CorpusCase:
        return self._cases[case_id]

    def article_ids(self) -> list[str]:
        return list(self._articles)

    def case_ids(self) -> list[str]:
        return list(self._cases)

    def articles(self, category: str | None = None) -> list[LawArticle]:
        if category is None:
            return list(self._articles.values())
        return [a for a in self._articles.values() if a.category == category]

    def cases(self) -> list[CorpusCase]:
        return list(self._cases.values())

    @property
    def n_articles(self) -> int:
        return len(self._articles)

    @property
    def n_cases(self) -> int:
        return len(self._cases)

    # -- sampling --

    def sample_articles(self, n: int, category: str | None = None,
                        seed: int = 0) -> list[LawArticle]:
        if n <= 0:
            raise ValueError("n must be positive")
        pool = sorted(a.article_id for a in self.articles(category))
        if len(pool) < n:
            where = f" in category {category!r}" if category else ""
            raise InsufficientCorpusError(
                f"need {n} articles{where}, corpus has {len(pool)}")
        chosen = random.Random(seed).sample(pool, n)
        return [self._articles[i] for i in chosen]
