"""Argument scoring and self-refinement.

Each courtroom turn is scored on a three-part rubric (citation, refutation,
comprehension; 0-5 each, 15 total). The refine loop alternates scoring and
revision: with n iterations the selection pool holds n+1 fully scored
variants (n+1 evaluator calls, n revisions) and the best total wins, ties
going to the earliest variant. Per turn, the highest- and lowest-scored
variants become one DPO preference pair; equal totals yield no pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    MootcourtError,
    ScoringFormatError,
    StructuredReplyError,
    TrialProtocolError,
    TurnGenerationError,
)
from .gateway import ChatAgent
from .prompts import revision_messages, scoring_messages

SUB_SCORE_MAX = 5
TOTAL_MAX = 15
DEFAULT_REFINE_ITERATIONS = 3


@dataclass
class ArgumentScore:
    s1_citation: int
    s2_refutation: int
    s3_comprehension: int
    feedback: str

    @property
    def total(self) -> int:
        return self.s1_citation + self.s2_refutation + self.s3_comprehension

    def validate(self) -> None:
        for name in ("s1_citation", "s2_refutation", "s3_comprehension"):
            value = getattr(self, name)
            # bool is an int subclass; a True sub-score is still malformed
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"{name} must be an integer")
            if not 0 <= value <= SUB_SCORE_MAX:
                raise ValueError(f"{name} must lie in [0, {SUB_SCORE_MAX}], "
                                 f"got {value}")

    def to_json(self) -> dict:
        return {"s1_citation": self.s1_citation,
                "s2_refutation": self.s2_refutation,
                "s3_comprehension": self.s3_comprehension,
                "total": self.total, "feedback": self.feedback}

    @classmethod
    def from_json(cls, data: dict) -> "ArgumentScore":
        score = cls(s1_citation=data["s1_citation"],
                    s2_refutation=data["s2_refutation"],
                    s3_comprehension=data["s3_comprehension"],
                    feedback=data.get("feedback", ""))
        score.validate()
        return score


@dataclass
class Variant:
    text: str
    score: ArgumentScore | None = None

    def to_json(self) -> dict:
        return {"text": self.text,
                "score": self.score.to_json() if self.score else None}

    @classmethod
    def from_json(cls, data: dict) -> "Variant":
        score = data.get("score")
        return cls(text=data["text"],
                   score=ArgumentScore.from_json(score) if score else None)


@dataclass
class RefineResult:
    best_text: str
    variants: list[Variant]


@dataclass
class PreferencePair:
    prompt: str
    chosen: str
    rejected: str
    chosen_score: int
    rejected_score: int
    case_id: str
    turn_index: int

    def validate(self) -> None:
        if self.chosen_score <= self.rejected_score:
            raise ValueError("chosen_score must exceed rejected_score")

    def to_json(self) -> dict:
        return {"prompt": self.prompt, "chosen": self.chosen,
                "rejected": self.rejected, "chosen_score": self.chosen_score,
                "rejected_score": self.rejected_score, "case_id": self.case_id,
                "turn_index": self.turn_index}


@dataclass
class DpoStats:
    pairs: int = 0
    skipped_zero_spread: int = 0
    skipped_unscored: int = 0

    def to_json(self) -> dict:
        return {"pairs": self.pairs,
                "skipped_zero_spread": self.skipped_zero_spread,
                "skipped_unscored": self.skipped_unscored}


def score_turn(turn_text: str, case_summary: str,
               evaluator: ChatAgent) -> ArgumentScore:
    """One rubric scoring. Out-of-range sub-scores are treated as parse
    failures (repair-retried), never clamped."""
    if not turn_text.strip():
        raise ValueError("turn_text must be non-empty")

    def in_rubric_range(obj: dict) -> None:
        for key in ("s1", "s2", "s3"):
            value = obj.get(key)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"score {key} must be an integer")
            if not 0 <= value <= SUB_SCORE_MAX:
                raise ValueError(f"score {key} out of range: {value}")
        if not isinstance(obj.get("feedback"), str):
            raise ValueError("missing feedback")

    try:
        obj = evaluator.chat_object(scoring_messages(turn_text, case_summary),
                                    validate=in_rubric_range)
    except StructuredReplyError as exc:
        raise ScoringFormatError(str(exc)) from exc
    return ArgumentScore(s1_citation=obj["s1"], s2_refutation=obj["s2"],
                         s3_comprehension=obj["s3"], feedback=obj["feedback"])


def _revise(role: str, current: Variant, case_summary: str,
            lawyer: ChatAgent) -> str:
    assert current.score is not None
    text = lawyer.chat_text(revision_messages(
        role, current.text, current.score.total, current.score.feedback,
        case_summary))
    if not text.strip():
        raise TurnGenerationError("empty revision reply")
    return text


def refine_turn(initial_text: str, case_summary: str, role: str,
                lawyer: ChatAgent, evaluator: ChatAgent,
                n_iterations: int = DEFAULT_REFINE_ITERATIONS) -> RefineResult:
    """Score-revise loop. On error the exception carries the variants
    produced so far as a `variants` attribute."""
    if n_iterations < 0:
        raise ValueError("n_iterations must be >= 0")
    variants = [Variant(initial_text)]
    if n_iterations == 0:
        return RefineResult(best_text=initial_text, variants=variants)
    try:
        for _ in range(n_iterations):
            current = variants[-1]
            current.score = score_turn(current.text, case_summary, evaluator)
            variants.append(Variant(_revise(role, current, case_summary, lawyer)))
        variants[-1].score = score_turn(variants[-1].text, case_summary,
                                        evaluator)
    except MootcourtError as exc:
        exc.variants = variants
        raise
    best = max(variants, key=lambda v: v.score.total)
    return RefineResult(best_text=best.text, variants=variants)


def turn_preference_pair(prompt: str, variants: list[Variant], case_id: str,
                         turn_index: int,
                         stats: DpoStats | None = None) -> PreferencePair | None:
    """Highest- vs lowest-total variant of one turn; None when fewer than two
    variants are scored or the spread is zero."""
    scored = [v for v in variants if v.score is not None]
    if len(scored) < 2:
        if stats:
            stats.skipped_unscored += 1
        return None
    chosen = max(scored, key=lambda v: v.score.total)
    rejected = min(scored, key=lambda v: v.score.total)
    if chosen.score.total == rejected.score.total:
        if stats:
            stats.skipped_zero_spread += 1
        return None
    pair = PreferencePair(prompt=prompt, chosen=chosen.text,
                          rejected=rejected.text,
                          chosen_score=chosen.score.total,
                          rejected_score=rejected.score.total,
                          case_id=case_id, turn_index=turn_index)
    pair.validate()
    if stats:
        stats.pairs += 1
    return pair


def emit_dpo_pairs(transcript, stats: DpoStats | None = None) -> list[PreferencePair]:
    """One preference pair per qualifying turn of a complete transcript."""
    if transcript.status != "complete":
        raise TrialProtocolError(
            f"transcript {transcript.case_id} is {transcript.status}; "
            "pairs come from complete trials only")
    pairs = []
    for turn in transcript.turns:
        pair = turn_preference_pair(turn.prompt, turn.variants,
                                    transcript.case_id, turn.turn_index,
                                    stats=stats)
        if pair is not None:
            pairs.append(pair)
    return pairs
