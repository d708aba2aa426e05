"""Judgment evaluation: article P/R/F1, criminal field extraction and
accuracy, LLM-judged civil result matching, and the aggregate report.

Aggregates are macro-averages: the per-case metric is computed first and the
report averages those values. Article references are read from citation
text of the form 《statute》第N条; an article token binds to the nearest
preceding statute mention, and both Arabic and Chinese numerals parse.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

from .errors import CivilFormatError, MetricsError, StructuredReplyError
from .gateway import ChatAgent, extract_object
from .numerals import NUMERAL_CHARS, numeral_to_int
from .prompts import civil_match_messages, civil_summarize_messages

# 无期徒刑 has no month count; the sentinel keeps exact-match comparison
LIFE_TERM_MONTHS = -1

STATUTE_PREFIX = "中华人民共和国"

_NUMBER_CLASS = f"[0-9{NUMERAL_CHARS}]"
_AMOUNT_CLASS = f"[0-9,，{NUMERAL_CHARS}]"

_STATUTE_RE = re.compile(r"《([^《》]{1,60})》")
_ARTICLE_RE = re.compile(f"第({_NUMBER_CLASS}+)条")
_CHARGE_RE = re.compile(r"犯([^，。；、！？\s罪]{1,20})罪")
_TERM_RE = re.compile(
    f"(无期徒刑|(?:有期徒刑|拘役)(?:({_NUMBER_CLASS}+)年)?(?:({_NUMBER_CLASS}+)个?月)?)")
_FINE_RE = re.compile(f"罚金(?:人民币)?({_AMOUNT_CLASS}+)元")

_RESULT_KEY_RE = re.compile(r"^Result (\d+)$")
_UNQUOTED_RESULT_RE = re.compile(r"([{,]\s*)(Result \d+)(\s*:)")


def normalize_statute_name(name: str) -> str:
    name = name.strip()
    if name.startswith(STATUTE_PREFIX):
        name = name[len(STATUTE_PREFIX):]
    return name


def extract_article_refs(text: str) -> set[tuple[str, int]]:
    """(statute, article number) pairs cited in the text, deduplicated."""
    statutes = [(m.end(), normalize_statute_name(m.group(1)))
                for m in _STATUTE_RE.finditer(text)]
    refs = set()
    for m in _ARTICLE_RE.finditer(text):
        statute = None
        for end, name in statutes:
            if end > m.start():
                break
            statute = name
        if statute is None:
            continue
        try:
            number = numeral_to_int(m.group(1))
        except ValueError:
            continue
        refs.add((statute, number))
    return refs


def render_article_ref(statute: str, number: int) -> str:
    return f"《{statute}》第{number}条"


def f1_from_pr(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def article_prf(predicted: set, gold: set) -> tuple[float, float, float]:
    """Per-case precision, recall, F1 over article reference sets."""
    if not gold:
        raise MetricsError("gold article set is empty; recall is undefined")
    overlap = len(set(predicted) & set(gold))
    precision = overlap / len(predicted) if predicted else 0.0
    recall = overlap / len(gold)
    return precision, recall, f1_from_pr(precision, recall)


def extract_criminal(text: str) -> dict:
    """Charge, prison term (months), and fine from free judgment text; last
    mention of each wins, absent fields are omitted."""
    out: dict = {}
    charges = _CHARGE_RE.findall(text)
    if charges:
        out["charge"] = charges[-1] + "罪"
    term = None
    for m in _TERM_RE.finditer(text):
        if m.group(1) == "无期徒刑":
            term = LIFE_TERM_MONTHS
            continue
        years, months = m.group(2), m.group(3)
        if years is None and months is None:
            continue
        try:
            value = (numeral_to_int(years) * 12 if years else 0) \
                + (numeral_to_int(months) if months else 0)
        except ValueError:
            continue
        term = value
    if term is not None:
        out["term_months"] = term
    fine = None
    for m in _FINE_RE.finditer(text):
        try:
            fine = numeral_to_int(m.group(1))
        except ValueError:
            continue
    if fine is not None:
        out["fine_amount"] = fine
    return out


def normalize_charge(charge: str) -> str:
    flat = unicodedata.normalize("NFKC", charge)
    flat = "".join(flat.split())
    return flat.strip("罪犯")


@dataclass
class CriminalEval:
    charge_accuracy: float
    term_accuracy: float
    fine_accuracy: float
    n_cases: int

    def to_json(self) -> dict:
        return {"charge": self.charge_accuracy, "term": self.term_accuracy,
                "fine": self.fine_accuracy, "n": self.n_cases}


def _field_match(pred: dict, ref: dict, key: str, normalize=None) -> bool:
    if (key in pred) != (key in ref):
        return False
    if key not in ref:
        return True
    a, b = pred[key], ref[key]
    if normalize is not None:
        return normalize(a) == normalize(b)
    return a == b


def criminal_accuracy(predictions: list[dict],
                      references: list[dict]) -> CriminalEval:
    """Fraction of cases with exact field agreement, per field. The lists
    are aligned by position."""
    if len(predictions) != len(references):
        raise MetricsError(f"misaligned lists: {len(predictions)} predictions "
                           f"vs {len(references)} references")
    if not references:
        raise MetricsError("no cases to evaluate")
    n = len(references)
    charge = term = fine = 0
    for pred, ref in zip(predictions, references):
        charge += _field_match(pred, ref, "charge", normalize_charge)
        term += _field_match(pred, ref, "term_months")
        fine += _field_match(pred, ref, "fine_amount")
    return CriminalEval(charge_accuracy=charge / n, term_accuracy=term / n,
                        fine_accuracy=fine / n, n_cases=n)


@dataclass
class CivilMatchResult:
    verdicts: dict[int, int]

    @property
    def accuracy(self) -> float:
        return sum(self.verdicts.values()) / len(self.verdicts)

    def validate(self) -> None:
        indices = sorted(self.verdicts)
        if indices != list(range(1, len(indices) + 1)):
            raise ValueError(f"result indices not contiguous from 1: {indices}")
        for i, v in self.verdicts.items():
            if v not in (0, 1):
                raise ValueError(f"Result {i} verdict must be 0 or 1, got {v!r}")


def lenient_object(text: str) -> dict | None:
    """Strict JSON extraction, falling back to re-quoting bare Result keys
    ({Result 1: 0} style replies)."""
    obj = extract_object(text)
    if obj is not None:
        return obj
    return extract_object(_UNQUOTED_RESULT_RE.sub(r'\1"\2"\3', text))


def _result_indices(obj: dict) -> list[int]:
    indices = []
    for key in obj:
        m = _RESULT_KEY_RE.match(key)
        if not m:
            raise ValueError(f"unexpected key {key!r}")
        indices.append(int(m.group(1)))
    if sorted(indices) != list(range(1, len(indices) + 1)):
        raise ValueError(f"result indices not contiguous from 1: "
                         f"{sorted(indices)}")
    return sorted(indices)


def summarize_civil(text: str, agent: ChatAgent) -> list[str]:
    """Organize raw judgment text into ordered result statements."""

    def check(obj: dict) -> None:
        indices = _result_indices(obj)
        if not indices:
            raise ValueError("no results")
        for i in indices:
            value = obj[f"Result {i}"]
            if not isinstance(value, str) or not value.strip():
                raise ValueError(f"Result {i} must be a non-empty statement")

    try:
        obj = agent.chat_object(civil_summarize_messages(text),
                                validate=check, parse=lenient_object)
    except StructuredReplyError as exc:
        raise CivilFormatError(str(exc)) from exc
    return [obj[f"Result {i}"] for i in range(1, len(obj) + 1)]


def match_civil(reference_results: list[str], candidate_results: list[str],
                agent: ChatAgent) -> CivilMatchResult:
    """0/1 verdict per reference result, judged by the evaluator model."""
    if not reference_results or not candidate_results:
        raise MetricsError("reference and candidate result lists must be "
                           "non-empty")
    reference = {f"Result {i + 1}": text
                 for i, text in enumerate(reference_results)}
    candidate = {f"Result {i + 1}": text
                 for i, text in enumerate(candidate_results)}

    def check(obj: dict) -> None:
        indices = _result_indices(obj)
        if len(indices) != len(reference_results):
            raise ValueError(
                f"reply covers {len(indices)} results, reference has "
                f"{len(reference_results)}")
        for i in indices:
            value = obj[f"Result {i}"]
            if isinstance(value, bool) or value not in (0, 1, "0", "1"):
                raise ValueError(f"Result {i} verdict must be 0 or 1")

    try:
        obj = agent.chat_object(civil_match_messages(reference, candidate),
                                validate=check, parse=lenient_object)
    except StructuredReplyError as exc:
        raise CivilFormatError(str(exc)) from exc
    result = CivilMatchResult(verdicts={
        i: int(obj[f"Result {i}"])
        for i in range(1, len(reference_results) + 1)})
    result.validate()
    return result


@dataclass
class CaseReference:
    case_id: str
    category: str
    gold_articles: list[str]
    criminal: dict | None = None
    civil_results: list[str] | None = None

    def to_json(self) -> dict:
        data: dict = {"case_id": self.case_id, "category": self.category,
                      "gold_articles": list(self.gold_articles)}
        if self.criminal is not None:
            data["criminal"] = dict(self.criminal)
        if self.civil_results is not None:
            data["civil_results"] = list(self.civil_results)
        return data

    @classmethod
    def from_json(cls, data: dict) -> "CaseReference":
        return cls(case_id=data["case_id"], category=data["category"],
                   gold_articles=list(data["gold_articles"]),
                   criminal=data.get("criminal"),
                   civil_results=data.get("civil_results"))


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def build_report(judgments: list, references: list[CaseReference],
                 agent: ChatAgent) -> dict:
    """Macro-averaged aggregate report over aligned judgment/reference sets."""
    ref_by_id = {r.case_id: r for r in references}
    judged_by_id = {j.case_id: j for j in judgments}
    only_judged = sorted(set(judged_by_id) - set(ref_by_id))
    only_referenced = sorted(set(ref_by_id) - set(judged_by_id))
    if only_judged or only_referenced:
        raise MetricsError(
            f"judgment/reference id mismatch: no reference for {only_judged}, "
            f"no judgment for {only_referenced}")

    warnings: list[str] = []
    article_rows = []
    for case_id in sorted(judged_by_id):
        judgment = judged_by_id[case_id]
        ref = ref_by_id[case_id]
        if not ref.gold_articles:
            raise MetricsError(f"reference {case_id} carries no gold articles")
        p, r, f1 = article_prf(set(judgment.predicted_articles),
                               set(ref.gold_articles))
        article_rows.append({"case_id": case_id, "precision": p, "recall": r,
                             "f1": f1})
        warnings.extend(f"{case_id}: {w}"
                        for w in getattr(judgment, "warnings", []))

    criminal_preds = []
    criminal_refs = []
    civil_rows = []
    for case_id in sorted(judged_by_id):
        judgment = judged_by_id[case_id]
        ref = ref_by_id[case_id]
        if ref.criminal is not None:
            outcome = judgment.criminal_outcome
            if outcome is None:
                warnings.append(f"{case_id}: criminal reference but no "
                                "criminal outcome predicted")
                criminal_preds.append({})
            else:
                criminal_preds.append({"charge": outcome["charge"],
                                       "term_months": outcome["prison_term_months"],
                                       "fine_amount": outcome["fine_amount"]})
            criminal_refs.append(ref.criminal)
        elif ref.civil_results:
            predicted = judgment.civil_results or []
            if not predicted:
                warnings.append(f"{case_id}: no civil results predicted")
                accuracy = 0.0
            else:
                accuracy = match_civil(ref.civil_results, predicted,
                                       agent).accuracy
            civil_rows.append({"case_id": case_id, "accuracy": accuracy})

    if criminal_refs:
        criminal = criminal_accuracy(criminal_preds, criminal_refs).to_json()
    else:
        criminal = {"charge": None, "term": None, "fine": None, "n": 0}

    return {
        "articles": {
            "precision": _mean([row["precision"] for row in article_rows]),
            "recall": _mean([row["recall"] for row in article_rows]),
            "f1": _mean([row["f1"] for row in article_rows]),
            "per_case": article_rows,
        },
        "criminal": criminal,
        "civil": {
            "accuracy": _mean([row["accuracy"] for row in civil_rows]),
            "per_case": civil_rows,
        },
        "warnings": warnings,
        "averaging": "macro",
    }


def render_report_table(report: dict) -> str:
    """Aligned plain-text view of the aggregate report."""

    def fmt(value) -> str:
        return "-" if value is None else f"{value:.4f}"

    rows = [
        ("articles.precision", fmt(report["articles"]["precision"]),
         len(report["articles"]["per_case"])),
        ("articles.recall", fmt(report["articles"]["recall"]),
         len(report["articles"]["per_case"])),
        ("articles.f1", fmt(report["articles"]["f1"]),
         len(report["articles"]["per_case"])),
        ("criminal.charge", fmt(report["criminal"]["charge"]),
         report["criminal"]["n"]),
        ("criminal.term", fmt(report["criminal"]["term"]),
         report["criminal"]["n"]),
        ("criminal.fine", fmt(report["criminal"]["fine"]),
         report["criminal"]["n"]),
        ("civil.accuracy", fmt(report["civil"]["accuracy"]),
         len(report["civil"]["per_case"])),
    ]
    width = max(len(name) for name, _, _ in rows)
    lines = [f"{'metric'.ljust(width)}  {'value':>8}  {'n':>4}"]
    lines += [f"{name.ljust(width)}  {value:>8}  {n:>4}"
              for name, value, n in rows]
    if report["warnings"]:
        lines.append("")
        lines.append(f"warnings: {len(report['warnings'])}")
        lines.extend(f"  - {w}" for w in report["warnings"])
    return "\n".join(lines)
