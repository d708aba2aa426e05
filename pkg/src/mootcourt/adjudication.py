"""Judgment prediction: the judge reads the case file, the finalized court
argument, and retrieved materials, then emits articles, outcome, and
analysis in one structured reply.

Ablation switches drop whole context sections (the argument record, the
retrieved materials) without touching anything else, so prompt logs from
ablated and full runs differ only in the dropped sections.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import CATEGORY_CRIMINAL, CorpusCase, CorpusStore
from .errors import JudgmentFormatError, StructuredReplyError, TrialProtocolError
from .forge import LegalCase
from .gateway import ChatAgent
from .prompts import (
    judgment_messages,
    judgment_sections,
    render_article,
    render_precedent,
)
from .trial import STATUS_COMPLETE, Transcript, transcript_text

DEFAULT_ARTICLE_CONTEXT_BUDGET = 40

CRIMINAL_FIELDS = ("charge", "prison_term_months", "fine_amount")


@dataclass
class Judgment:
    case_id: str
    predicted_articles: list[str]
    analysis: str
    criminal_outcome: dict | None = None
    civil_results: list[str] | None = None
    warnings: list[str] = field(default_factory=list)

    def validate(self, category: str | None = None) -> None:
        if (self.criminal_outcome is None) == (self.civil_results is None):
            raise ValueError("exactly one of criminal_outcome and "
                             "civil_results must be present")
        if category is not None:
            is_criminal = category == CATEGORY_CRIMINAL
            if is_criminal != (self.criminal_outcome is not None):
                raise ValueError(f"outcome type does not match category "
                                 f"{category!r}")
        if not self.predicted_articles and not self.warnings:
            raise ValueError("predicted_articles empty with no recorded "
                             "warning")

    def to_json(self) -> dict:
        data: dict = {"case_id": self.case_id,
                      "predicted_articles": list(self.predicted_articles)}
        if self.criminal_outcome is not None:
            data["criminal_outcome"] = dict(self.criminal_outcome)
        if self.civil_results is not None:
            data["civil_results"] = list(self.civil_results)
        data["analysis"] = self.analysis
        if self.warnings:
            data["warnings"] = list(self.warnings)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "Judgment":
        judgment = cls(case_id=data["case_id"],
                       predicted_articles=list(data["predicted_articles"]),
                       analysis=data["analysis"],
                       criminal_outcome=data.get("criminal_outcome"),
                       civil_results=data.get("civil_results"),
                       warnings=list(data.get("warnings", [])))
        judgment.validate()
        return judgment


@dataclass
class JudgeContext:
    case: LegalCase
    transcript_text: str | None
    precedent: CorpusCase | None
    article_lines: list[str]
    no_argument: bool = False
    no_retrieval: bool = False


def assemble_context(case: LegalCase, retrieval, transcript: Transcript | None = None,
                     no_argument: bool = False, no_retrieval: bool = False,
                     article_budget: int = DEFAULT_ARTICLE_CONTEXT_BUDGET) -> JudgeContext:
    """Gather everything the judge prompt needs; ablation flags drop the
    argument record / retrieved materials."""
    case.validate()
    if no_argument:
        transcript = None
    if transcript is not None:
        if transcript.status != STATUS_COMPLETE:
            raise TrialProtocolError(
                f"judge context requires a complete transcript; "
                f"{transcript.case_id} is {transcript.status}")
        record = transcript_text(transcript)
    else:
        record = None

    precedent = None
    article_lines: list[str] = []
    if retrieval is not None and not no_retrieval:
        precedent = retrieval.retrieve_precedent(case.facts)
        hits = retrieval.retrieve_articles(case.facts)
        article_lines = [render_article(retrieval.store.get_article(h.doc_id))
                         for h in hits[:article_budget]]
    return JudgeContext(case=case, transcript_text=record, precedent=precedent,
                        article_lines=article_lines,
                        no_argument=transcript is None,
                        no_retrieval=no_retrieval or retrieval is None)


def _check_reply(category: str):
    is_criminal = category == CATEGORY_CRIMINAL

    def check(obj: dict) -> None:
        articles = obj.get("articles")
        if not isinstance(articles, list) or \
                not all(isinstance(a, str) for a in articles):
            raise ValueError("articles must be a list of identifiers")
        if not isinstance(obj.get("analysis"), str) or not obj["analysis"].strip():
            raise ValueError("missing analysis")
        if is_criminal:
            if "results" in obj:
                raise ValueError("criminal case cannot carry civil results")
            if not isinstance(obj.get("charge"), str) or not obj["charge"].strip():
                raise ValueError("missing charge")
            months = obj.get("prison_term_months")
            if isinstance(months, bool) or not isinstance(months, int) or months < 0:
                raise ValueError("prison_term_months must be a non-negative "
                                 "integer")
            fine = obj.get("fine_amount")
            if isinstance(fine, bool) or not isinstance(fine, (int, float)) \
                    or fine < 0:
                raise ValueError("fine_amount must be a non-negative number")
        else:
            if any(key in obj for key in CRIMINAL_FIELDS):
                raise ValueError(f"{category} case cannot carry a criminal "
                                 "outcome")
            results = obj.get("results")
            if not isinstance(results, list) or not results or \
                    not all(isinstance(r, str) and r.strip() for r in results):
                raise ValueError("results must be a non-empty list of "
                                 "statements")

    return check


def render_judgment(ctx: JudgeContext, judge: ChatAgent,
                    store: CorpusStore) -> Judgment:
    """One structured judge reply, with cited article ids checked against
    the statute corpus. Unknown ids are dropped and recorded as warnings."""
    case = ctx.case
    precedent_text = (render_precedent(ctx.precedent)
                      if ctx.precedent is not None else None)
    sections = judgment_sections(case.facts, case.indictment, case.plea,
                                 ctx.transcript_text, precedent_text,
                                 ctx.article_lines)
    messages = judgment_messages(sections, case.category)
    try:
        obj = judge.chat_object(messages, validate=_check_reply(case.category))
    except StructuredReplyError as exc:
        raise JudgmentFormatError(str(exc)) from exc

    warnings: list[str] = []
    seen: set[str] = set()
    predicted: list[str] = []
    for article_id in obj["articles"]:
        if article_id in seen:
            continue
        seen.add(article_id)
        if store.has_article(article_id):
            predicted.append(article_id)
        else:
            warnings.append(f"dropped unknown article id {article_id}")
    if not predicted:
        warnings.append("no known statute articles cited")

    if case.category == CATEGORY_CRIMINAL:
        outcome = {"charge": obj["charge"],
                   "prison_term_months": obj["prison_term_months"],
                   "fine_amount": obj["fine_amount"]}
        judgment = Judgment(case_id=case.case_id, predicted_articles=predicted,
                            analysis=obj["analysis"],
                            criminal_outcome=outcome, warnings=warnings)
    else:
        judgment = Judgment(case_id=case.case_id, predicted_articles=predicted,
                            analysis=obj["analysis"],
                            civil_results=list(obj["results"]),
                            warnings=warnings)
    judgment.validate(case.category)
    return judgment
