"""Prompt assembly for every model-facing stage.

All templates live here so tests can assert prompt contracts (what context
each stage sees) against the gateway log. Structured stages carry a one-line
OUTPUT-SHAPE skeleton describing the reply object; identifiers that a reply
may quote are rendered with id_tag so they are machine-recoverable.

The two result-list evaluation prompts and the three-dimension argument
rubric are fixed text; the rubric is embedded verbatim in scoring prompts.
"""

from __future__ import annotations

import json
from typing import Sequence

from .corpus import CorpusCase, LawArticle
from .gateway import ChatMessage, id_tag, render_output_shape

ROLE_PLAINTIFF = "plaintiff"
ROLE_DEFENDANT = "defendant"

# Substitution slot used by the two civil-evaluation templates below.
RAW_RESULTS_TOKEN = "<RAW-RELUSTS>"

ARGUMENT_RUBRIC = """\
s1: Did the content of the debate cite legal provisions and cases, and is the relevance of legal articles and cases to this case significant? Can you provide effective assistance to the judge's judgment, etc. with a score of 0-5 points;
s2: Does it include the explanation of our viewpoint and the rebuttal of the other party's viewpoint. Is our viewpoint reasonable? Is the rebuttal reasonable and well founded? Is there a correct judgment on the current situation of the case? Whether it is conducive to providing judges with a comprehensive and effective perspective, etc., score 0-5 points;
s3: After a round of debate, can we give the outside world a comprehensive understanding of the case? Can summarize the plot of the case, give the judge room to make judgments, etc., score 0-5 points
Evaluation criteria:
s1: Did the content of the debate cite legal articles and cases, and is the relevance of legal articles and cases to this case significant? Can you provide effective assistance to the judge's judgment.
0.5-1 points: Refers to some relevant laws and cases, which can provide reference for the judge's judgment to a certain extent, but not comprehensive enough.
1-1.5 points: Some relevant laws and cases were cited, but it was not comprehensive or in-depth enough.
1.5-2.5 points: In addition to citing some legal articles and cases, the interpretation of applicability is also relatively in-depth, which is more helpful for judges to make judgments.
2.5-4 points: Many relevant laws and cases have been cited, which has a high relevance to this case and a clear interpretation, providing effective assistance for the judge's judgment.
4-5 points: Accurately cited a large number of highly relevant laws and cases, providing comprehensive, in-depth, and highly valuable references for judges' judgments.
s2: Does it include the explanation of our viewpoint and the rebuttal of the other party's viewpoint? The viewpoint needs to be reasonable, and the rebuttal needs to be well founded in order to provide the judge with an effective perspective.
0-0.5 points: Explained our viewpoint and provided some rebuttal to the other party's viewpoint, but there are deficiencies in the strength, rationality, and basis of the viewpoint and rebuttal.
0.5-1.5: We have clearly stated our viewpoint and have a certain degree of counterattack against the other party, but the strength of the judge's decisive judgment is not strong enough.
1.5-3 points: Clearly and reasonably presented our viewpoint, and strongly refuted the other party's viewpoint with sufficient evidence.
3-4.5 points: The explanation of our viewpoint has basically gained accurate and strong persuasiveness, comprehensively elaborated our viewpoint, and provided most complete and reliable rebuttals to the other party's viewpoint.
4.5-5 points: Accurately, deeply, and persuasively presented our viewpoint, and provided a comprehensive, powerful, and well founded rebuttal to the other party's viewpoint.
s3: After a round of debate, can we give the outside world a comprehensive understanding of the case? Being able to summarize the plot of the case and provide the judge with room for judgment.
0-0.5 points: Described some of the case plot, but there are some key information omissions that have certain limitations on the judge's judgment.
0.5-1.5 points: A comprehensive description of the case's plot can provide the outside world with a clear understanding of the case and provide sufficient judgment space for the judge.
1.5-2.5 points: It basically covers the details of the case, and the outside world has a basic understanding of the case. The judge can basically judge the outcome of the case.
2.5-3.5: Relatively complete, accurate, and comprehensive description of the case plot, providing the outside world with a thorough understanding of the case and offering direction for the judge's judgment.
3.5-5 points: A complete, accurate, and comprehensive description of the case plot provides the outside world with a very thorough understanding of the case, providing judges with broad and sufficient judgment space."""

CIVIL_SUMMARIZE_TEMPLATE = """\
Please organize the given text into the required format.
Example 1: Current text: The judgment is as follows: Defendant should return the loan of 200000 yuan to Plaintiff; Defendant shall pay interest during the period of fund occupation at an annual rate of 6% from December 20, 2021 to October 19, 2023; The defendant shall bear all the litigation costs of this case. The above is the final judgment of this court. The defendant is requested to fulfill the repayment obligation within the time limit given in the judgment and pay interest and litigation costs in accordance with the law.
Output list: {"Result 1": "The defendant should return the loan of 200000 yuan to the plaintiff", "Result 2": "The defendant  should pay interest on the funds during the occupation period at an annual interest rate of 6% from December 20, 2021 to October 19, 2023"}
Example 2: ...
Example 3: ...
Please organize the following content:
Current text:<RAW-RELUSTS>
Output List:"""

CIVIL_MATCH_TEMPLATE = """\
Please compare the candidate's answer with the reference answer to determine if the answer is correct. No explanation is needed, and the result can be directly output in JSON structure
Example 1:
Current text: Reference answers: {"Result 1": "The defendant should return the loan of 200000 yuan to the plaintiff", "Result 2": "The defendant should pay interest on the capital occupation period at an annual interest rate of 6% from December 20, 2021 to October 19, 2023"}
Candidate answers: {"Result 1": "The defendant should pay interest on the capital occupation period at an annual interest rate of 6% from December 20, 2021 to October 19, 2023", "Result 2": "The defendant should return the loan of 10000 yuan to the plaintiff"}
Output list: {Result 1: 0, Result 2: 1}
Example 2: ...
Example 3: ...
Please organize the following content and output it in JSON structure:
Current text:<RAW-RELUSTS>
Output list: {"Result 1":<>, "Result 2":<>,...}"""

# Section joiner for the judge prompt. Ablations remove whole sections, so
# log diffs can split on this marker and compare section sets directly.
SECTION_JOINER = "\n## "

DEFAULT_CONTEXT_CHAR_BUDGET = 6000


def render_article(article: LawArticle) -> str:
    return (f"{id_tag(article.article_id)} 《{article.statute_name}》"
            f"第{article.article_number}条: {article.body}")


def render_precedent(case: CorpusCase) -> str:
    return (f"{id_tag(case.case_id)} {case.case_name} ({case.action_cause}): "
            f"{case.full_text}")


def render_retrieval_context(articles: Sequence[LawArticle],
                             precedent: CorpusCase | None,
                             char_budget: int = DEFAULT_CONTEXT_CHAR_BUDGET) -> str:
    """Most-relevant-first lines, cut off at the character budget."""
    lines = []
    used = 0
    entries = [render_article(a) for a in articles]
    if precedent is not None:
        entries.append(render_precedent(precedent))
    for entry in entries:
        if used + len(entry) > char_budget and lines:
            break
        lines.append(entry)
        used += len(entry) + 1
    return "\n".join(lines)


def messages_digest_text(messages: Sequence[ChatMessage]) -> str:
    """Single-string form of a prompt (persisted as the DPO prompt field)."""
    return "\n\n".join(f"[{m.role}]\n{m.text}" for m in messages)


# ---------------------------------------------------------------------------
# case generation and vetting
# ---------------------------------------------------------------------------

CASE_SHAPE = {"facts": "<text>", "indictment": "<text>", "plea": "<text>"}

VERDICT_SHAPE = {"correctness": "<bool>", "reality": "<bool>",
                 "rationality": "<bool>", "complexity_pass": "<bool>",
                 "rationale": "<text>"}


def case_generation_messages(articles: Sequence[LawArticle]) -> list[ChatMessage]:
    article_block = "\n".join(render_article(a) for a in articles)
    user = (
        "Generate one synthetic legal case grounded in the statute articles "
        "below. The case must be complex enough to support genuine dispute: "
        "include concrete dates, amounts, and party conduct. Write three "
        "sections: the case facts, the plaintiff's indictment, and the "
        "defendant's pleadings. Do not write a judgment or verdict.\n\n"
        f"Statute articles:\n{article_block}\n\n"
        + render_output_shape(CASE_SHAPE)
    )
    return [ChatMessage("system", "You draft realistic Chinese legal cases."),
            ChatMessage("user", user)]


def case_vetting_messages(facts: str, indictment: str, plea: str) -> list[ChatMessage]:
    user = (
        "Assess the generated case below on four gates and answer each with "
        "a boolean. correctness: internally consistent and legally coherent. "
        "reality: could plausibly occur in the real world. rationality: the "
        "parties' positions are rationally arguable. complexity_pass: false "
        "if the case is overly simple or anomalous. Also give a one-sentence "
        "rationale.\n\n"
        f"Case facts:\n{facts}\n\nIndictment:\n{indictment}\n\nPleadings:\n{plea}\n\n"
        + render_output_shape(VERDICT_SHAPE)
    )
    return [ChatMessage("system", "You are a strict reviewer of synthetic legal cases."),
            ChatMessage("user", user)]


# ---------------------------------------------------------------------------
# courtroom turns
# ---------------------------------------------------------------------------

TURN_SHAPE = {"argument": "<text>", "articles": ["<id art>"],
              "precedents": ["<id case>"]}


def _lawyer_system(role: str) -> ChatMessage:
    side = "plaintiff" if role == ROLE_PLAINTIFF else "defendant"
    return ChatMessage("system", f"You are the {side}'s lawyer in a Chinese "
                                 "civil or criminal proceeding.")


def opening_messages(role: str, facts: str, own_pleading: str,
                     retrieval_context: str,
                     complaint_text: str | None = None) -> list[ChatMessage]:
    """Turn 0 (complaint) or turn 1 (defense; sees the complaint)."""
    if role == ROLE_PLAINTIFF:
        task = ("Formulate the complaint: state the claims, the factual basis, "
                "and the legal reasoning, grounded in the case facts and the "
                "indictment.")
        own_label = "Indictment"
    else:
        task = ("Respond substantively to the complaint: address its factual "
                "determinations and legal applications, and construct a "
                "comprehensive defense statement.")
        own_label = "Pleadings"
    parts = [task, f"Case facts:\n{facts}", f"{own_label}:\n{own_pleading}"]
    if complaint_text is not None:
        parts.append(f"Opposing complaint:\n{complaint_text}")
    if retrieval_context:
        parts.append(f"Retrieved legal materials:\n{retrieval_context}")
    return [_lawyer_system(role), ChatMessage("user", "\n\n".join(parts))]


def round_turn_messages(role: str, round_number: int, facts: str,
                        own_pleading: str, retrieval_context: str,
                        opponent_text: str) -> list[ChatMessage]:
    """Rounds 1-3: statement, retort to the opponent's last turn, citations."""
    task = (
        f"Argue round {round_number}. Produce three components in one "
        "argument: a statement of your standpoint and legal claims, a retort "
        "countering the opponent's latest turn (point out logical flaws or "
        "errors in legal application), and legal citations supporting your "
        "claims. List every statute article or precedent you rely on in the "
        "structured citation fields."
    )
    parts = [task,
             f"Case facts:\n{facts}",
             f"Your side's pleading:\n{own_pleading}",
             f"Opponent's latest turn:\n{opponent_text}"]
    if retrieval_context:
        parts.append(f"Retrieved legal materials:\n{retrieval_context}")
    parts.append(render_output_shape(TURN_SHAPE))
    return [_lawyer_system(role), ChatMessage("user", "\n\n".join(parts))]


# ---------------------------------------------------------------------------
# scoring and revision
# ---------------------------------------------------------------------------

SCORE_SHAPE = {"s1": "<int 0-5>", "s2": "<int 0-5>", "s3": "<int 0-5>",
               "feedback": "<text>"}


def scoring_messages(turn_text: str, case_summary: str) -> list[ChatMessage]:
    user = (
        "Score the lawyer's argument below on the three dimensions, each an "
        "integer from 0 to 5, and give constructive feedback for revision.\n\n"
        f"Scoring criteria:\n{ARGUMENT_RUBRIC}\n\n"
        f"Case summary:\n{case_summary}\n\n"
        f"Argument:\n{turn_text}\n\n"
        + render_output_shape(SCORE_SHAPE)
    )
    return [ChatMessage("system", "You evaluate courtroom arguments with a "
                                  "fixed rubric."),
            ChatMessage("user", user)]


def revision_messages(role: str, current_text: str, total: int,
                      feedback: str, case_summary: str) -> list[ChatMessage]:
    user = (
        "Revise your argument using the evaluator's feedback. Keep what "
        "scored well, fix what it criticizes, and return the full revised "
        f"argument.\n\nCase summary:\n{case_summary}\n\n"
        f"Current argument:\n{current_text}\n\n"
        f"Evaluator total score: {total} of 15\nFeedback:\n{feedback}"
    )
    return [_lawyer_system(role), ChatMessage("user", user)]


# ---------------------------------------------------------------------------
# judgment
# ---------------------------------------------------------------------------

CRIMINAL_JUDGMENT_SHAPE = {
    "articles": ["<id art>"],
    "charge": "<text>",
    "prison_term_months": "<int 0-240>",
    "fine_amount": "<number>",
    "analysis": "<text>",
}

CIVIL_JUDGMENT_SHAPE = {
    "articles": ["<id art>"],
    "results": ["<text>"],
    "analysis": "<text>",
}


def judgment_sections(facts: str, indictment: str, plea: str,
                      transcript_text: str | None,
                      precedent_text: str | None,
                      article_lines: Sequence[str]) -> list[str]:
    """Ordered judge-context sections; ablations drop whole entries."""
    sections = [
        f"Case\nFacts:\n{facts}\n\nIndictment:\n{indictment}\n\nPleadings:\n{plea}"
    ]
    if transcript_text is not None:
        sections.append(f"Court argument record\n{transcript_text}")
    if precedent_text is not None:
        sections.append(f"Retrieved precedent\n{precedent_text}")
    if article_lines:
        sections.append("Candidate statute articles\n" + "\n".join(article_lines))
    return sections


def judgment_messages(sections: Sequence[str], category: str) -> list[ChatMessage]:
    shape = CRIMINAL_JUDGMENT_SHAPE if category == "criminal" else CIVIL_JUDGMENT_SHAPE
    if category == "criminal":
        task = ("Task\nDecide the case: list the statute articles the judgment "
                "depends on, state the charge, the prison term in months, and "
                "the fine amount in yuan, and analyse the whole case.")
    else:
        task = ("Task\nDecide the case: list the statute articles the judgment "
                "depends on, state each judgment result as its own entry, and "
                "analyse the whole case.")
    body = SECTION_JOINER.join(list(sections) + [task])
    user = body + "\n\n" + render_output_shape(shape)
    return [ChatMessage("system", "You are the presiding judge."),
            ChatMessage("user", user)]


# ---------------------------------------------------------------------------
# civil result evaluation
# ---------------------------------------------------------------------------


def civil_summarize_messages(raw_text: str) -> list[ChatMessage]:
    return [ChatMessage("user",
                        CIVIL_SUMMARIZE_TEMPLATE.replace(RAW_RESULTS_TOKEN, raw_text))]


def civil_match_messages(reference: dict[str, str],
                         candidate: dict[str, str]) -> list[ChatMessage]:
    filled = ("Reference answers: " + json.dumps(reference, ensure_ascii=False)
              + "\nCandidate answers: " + json.dumps(candidate, ensure_ascii=False))
    return [ChatMessage("user",
                        CIVIL_MATCH_TEMPLATE.replace(RAW_RESULTS_TOKEN, filled))]
