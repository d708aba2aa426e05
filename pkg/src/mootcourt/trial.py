"""The courtroom argumentation protocol.

A trial is 8 turns in fixed role order: plaintiff complaint, defendant
defense, then three rounds of alternating argument. Opening turns are free
text; round turns return a structured object whose citation fields are
parsed into the turn record. Every generated turn can be handed to the
refine loop; the selected best variant becomes the turn text.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    MootcourtError,
    StructuredReplyError,
    TrialAborted,
    TrialProtocolError,
    TurnGenerationError,
)
from .evolution import Variant, refine_turn
from .forge import LegalCase
from .gateway import ChatAgent
from .prompts import (
    DEFAULT_CONTEXT_CHAR_BUDGET,
    ROLE_DEFENDANT,
    ROLE_PLAINTIFF,
    messages_digest_text,
    opening_messages,
    render_retrieval_context,
    round_turn_messages,
)

STATUS_IN_PROGRESS = "in_progress"
STATUS_COMPLETE = "complete"
TRIAL_STATUSES = (STATUS_IN_PROGRESS, STATUS_COMPLETE)

DEFAULT_ROUNDS = 3
CONTEXT_ARTICLES_PER_TURN = 5


def turns_per_trial(rounds: int = DEFAULT_ROUNDS) -> int:
    return 2 + 2 * rounds


def turn_role(turn_index: int) -> str:
    return ROLE_PLAINTIFF if turn_index % 2 == 0 else ROLE_DEFENDANT


def turn_round(turn_index: int) -> int:
    return 0 if turn_index < 2 else turn_index // 2


@dataclass
class ArgumentTurn:
    turn_index: int
    round: int
    role: str
    text: str
    prompt: str
    cited_articles: list[str] = field(default_factory=list)
    cited_precedents: list[str] = field(default_factory=list)
    variants: list[Variant] = field(default_factory=list)

    def validate(self) -> None:
        if self.role != turn_role(self.turn_index):
            raise ValueError(f"turn {self.turn_index} must be "
                             f"{turn_role(self.turn_index)}, got {self.role}")
        if self.round != turn_round(self.turn_index):
            raise ValueError(f"turn {self.turn_index} belongs to round "
                             f"{turn_round(self.turn_index)}, got {self.round}")
        if not self.text.strip():
            raise ValueError("turn text must be non-empty")

    def to_json(self) -> dict:
        return {"turn_index": self.turn_index, "round": self.round,
                "role": self.role, "text": self.text, "prompt": self.prompt,
                "cited_articles": list(self.cited_articles),
                "cited_precedents": list(self.cited_precedents),
                "variants": [v.to_json() for v in self.variants]}

    @classmethod
    def from_json(cls, data: dict) -> "ArgumentTurn":
        turn = cls(turn_index=data["turn_index"], round=data["round"],
                   role=data["role"], text=data["text"],
                   prompt=data.get("prompt", ""),
                   cited_articles=list(data.get("cited_articles", [])),
                   cited_precedents=list(data.get("cited_precedents", [])),
                   variants=[Variant.from_json(v)
                             for v in data.get("variants", [])])
        turn.validate()
        return turn


@dataclass
class Transcript:
    case_id: str
    turns: list[ArgumentTurn] = field(default_factory=list)
    status: str = STATUS_IN_PROGRESS

    def validate(self, rounds: int = DEFAULT_ROUNDS) -> None:
        if self.status not in TRIAL_STATUSES:
            raise ValueError(f"status must be one of {TRIAL_STATUSES}")
        total = turns_per_trial(rounds)
        if len(self.turns) > total:
            raise ValueError(f"{len(self.turns)} turns exceed the protocol "
                             f"maximum {total}")
        for position, turn in enumerate(self.turns):
            if turn.turn_index != position:
                raise ValueError(f"turn at position {position} has index "
                                 f"{turn.turn_index}")
            turn.validate()
        if (self.status == STATUS_COMPLETE) != (len(self.turns) == total):
            raise ValueError("complete means exactly "
                             f"{total} turns; got {len(self.turns)} with "
                             f"status {self.status}")

    def to_json(self) -> dict:
        return {"case_id": self.case_id, "status": self.status,
                "turns": [t.to_json() for t in self.turns]}

    @classmethod
    def from_json(cls, data: dict, rounds: int = DEFAULT_ROUNDS) -> "Transcript":
        transcript = cls(case_id=data["case_id"],
                         turns=[ArgumentTurn.from_json(t)
                                for t in data["turns"]],
                         status=data["status"])
        transcript.validate(rounds)
        return transcript


@dataclass
class TrialAgents:
    plaintiff: ChatAgent
    defendant: ChatAgent
    evaluator: ChatAgent | None = None

    def for_role(self, role: str) -> ChatAgent:
        return self.plaintiff if role == ROLE_PLAINTIFF else self.defendant


def case_summary(case: LegalCase) -> str:
    return (f"Facts:\n{case.facts}\n\nIndictment:\n{case.indictment}\n\n"
            f"Pleadings:\n{case.plea}")


def retrieval_context(case: LegalCase, retrieval,
                      n_articles: int = CONTEXT_ARTICLES_PER_TURN,
                      char_budget: int = DEFAULT_CONTEXT_CHAR_BUDGET) -> str:
    """Top article bodies plus the retrieved precedent, rendered for a
    lawyer prompt. Empty string when no retriever is supplied."""
    if retrieval is None:
        return ""
    hits = retrieval.retrieve_articles(case.facts)
    articles = [retrieval.store.get_article(h.doc_id)
                for h in hits[:n_articles]]
    precedent = retrieval.retrieve_precedent(case.facts)
    return render_retrieval_context(articles, precedent, char_budget)


def _is_turn_object(obj: dict) -> None:
    if not isinstance(obj.get("argument"), str) or not obj["argument"].strip():
        raise ValueError("missing or empty argument")
    for key in ("articles", "precedents"):
        value = obj.get(key)
        if not isinstance(value, list) or \
                not all(isinstance(x, str) for x in value):
            raise ValueError(f"{key} must be a list of identifiers")


def _generate_turn(case: LegalCase, transcript: Transcript,
                   agents: TrialAgents, context_text: str,
                   refine_iterations: int) -> ArgumentTurn:
    index = len(transcript.turns)
    role = turn_role(index)
    round_number = turn_round(index)
    lawyer = agents.for_role(role)
    own_pleading = case.indictment if role == ROLE_PLAINTIFF else case.plea

    if round_number == 0:
        complaint = transcript.turns[0].text if index == 1 else None
        messages = opening_messages(role, case.facts, own_pleading,
                                    context_text, complaint_text=complaint)
        text = lawyer.chat_text(messages)
        if not text.strip():
            raise TurnGenerationError(f"empty reply for opening turn {index}")
        cited_articles: list[str] = []
        cited_precedents: list[str] = []
    else:
        opponent_text = transcript.turns[-1].text
        messages = round_turn_messages(role, round_number, case.facts,
                                       own_pleading, context_text,
                                       opponent_text)
        try:
            obj = lawyer.chat_object(messages, validate=_is_turn_object)
        except StructuredReplyError as exc:
            raise TurnGenerationError(
                f"turn {index} (round {round_number}, {role}): {exc}") from exc
        text = obj["argument"]
        cited_articles = obj["articles"]
        cited_precedents = obj["precedents"]

    turn = ArgumentTurn(turn_index=index, round=round_number, role=role,
                        text=text, prompt=messages_digest_text(messages),
                        cited_articles=cited_articles,
                        cited_precedents=cited_precedents,
                        variants=[Variant(text)])
    if refine_iterations > 0:
        if agents.evaluator is None:
            raise ValueError("refinement requires an evaluator agent")
        refined = refine_turn(text, case_summary(case), role, lawyer,
                              agents.evaluator, n_iterations=refine_iterations)
        turn.text = refined.best_text
        turn.variants = refined.variants
    return turn


def open_proceedings(case: LegalCase, agents: TrialAgents, retrieval,
                     refine_iterations: int = 0) -> Transcript:
    """Turn 0 (complaint) and turn 1 (defense, which sees the complaint)."""
    case.validate()
    transcript = Transcript(case_id=case.case_id)
    context_text = retrieval_context(case, retrieval)
    for _ in range(2):
        transcript.turns.append(_generate_turn(case, transcript, agents,
                                               context_text,
                                               refine_iterations))
    return transcript


def run_round(transcript: Transcript, case: LegalCase, round_number: int,
              agents: TrialAgents, retrieval,
              refine_iterations: int = 0) -> Transcript:
    """Advance one full round: plaintiff turn, then defendant turn."""
    if round_number < 1:
        raise TrialProtocolError(f"round_number must be >= 1, got {round_number}")
    if len(transcript.turns) != 2 * round_number:
        raise TrialProtocolError(
            f"round {round_number} needs exactly {2 * round_number} prior "
            f"turns, found {len(transcript.turns)}")
    context_text = retrieval_context(case, retrieval)
    for _ in range(2):
        transcript.turns.append(_generate_turn(case, transcript, agents,
                                               context_text,
                                               refine_iterations))
    return transcript


def resume_trial(transcript: Transcript, case: LegalCase, agents: TrialAgents,
                 retrieval, refine_iterations: int = 0,
                 rounds: int = DEFAULT_ROUNDS) -> Transcript:
    """Generate every missing turn. Any failure raises with the transcript
    so far attached, still in progress."""
    if transcript.case_id != case.case_id:
        raise TrialProtocolError(f"transcript belongs to {transcript.case_id}, "
                                 f"not {case.case_id}")
    if transcript.status == STATUS_COMPLETE:
        return transcript
    total = turns_per_trial(rounds)
    context_text = retrieval_context(case, retrieval)
    while len(transcript.turns) < total:
        try:
            turn = _generate_turn(case, transcript, agents, context_text,
                                  refine_iterations)
        except MootcourtError as exc:
            raise TrialAborted(
                f"trial for {case.case_id} aborted at turn "
                f"{len(transcript.turns)}: {exc}",
                transcript=transcript) from exc
        transcript.turns.append(turn)
    transcript.status = STATUS_COMPLETE
    transcript.validate(rounds)
    return transcript


def run_full_trial(case: LegalCase, agents: TrialAgents, retrieval,
                   refine_iterations: int = 3,
                   rounds: int = DEFAULT_ROUNDS) -> Transcript:
    """The whole protocol for one case, refining every turn."""
    case.validate()
    transcript = Transcript(case_id=case.case_id)
    return resume_trial(transcript, case, agents, retrieval,
                        refine_iterations=refine_iterations, rounds=rounds)


def transcript_text(transcript: Transcript) -> str:
    """Finalized turns rendered for the judge, citation trailers included."""
    blocks = []
    for turn in transcript.turns:
        head = f"[round {turn.round} {turn.role}]"
        cites = turn.cited_articles + turn.cited_precedents
        trailer = f"\n(cites: {', '.join(cites)})" if cites else ""
        blocks.append(f"{head}\n{turn.text}{trailer}")
    return "\n\n".join(blocks)
