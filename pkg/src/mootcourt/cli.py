"""Command-line interface.

Standalone verbs (corpus, forge, trial, retrieve, retriever, judge, evolve,
eval) operate on a workspace directory: the statute/case corpus lives under
<workspace>/corpus and artifacts land in sibling subdirectories, mirroring
the run-directory layout. `run --config` executes the whole pipeline into
its own run directory instead.

Exit codes: 0 success, 2 validation error (bad config, bad input file,
unknown id), 3 stage failure (a pipeline step started and could not finish).
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from .adjudication import assemble_context, render_judgment
from .clock import SimulatedClock, SystemClock
from .config import RunConfig, validate_config
from .corpus import CorpusStore, load_redaction_rules
from .errors import ConfigError, MootcourtError, TrialAborted
from .evolution import DpoStats, emit_dpo_pairs
from .forge import LegalCase, forge_batch
from .gateway import CallLog
from .jsonio import read_json, read_jsonl, write_json, write_jsonl
from .metrics import CaseReference, build_report, render_report_table
from .pipeline import (
    build_agents,
    build_gateways,
    build_retriever,
    run_pipeline,
)
from .retrieval import recall_at_k
from .trial import STATUS_COMPLETE, Transcript, TrialAgents, resume_trial

EXIT_VALIDATION = 2
EXIT_STAGE_FAILURE = 3


class Workspace:
    """Lazy holder for everything a standalone verb needs."""

    def __init__(self, root: Path, config_path: Path | None):
        self.root = root
        self.config_path = config_path
        self._config: RunConfig | None = None
        self._store: CorpusStore | None = None
        self._wiring = None

    @property
    def config(self) -> RunConfig:
        if self._config is None:
            self._config = validate_config(self.config_path)
            if self.config_path is None:
                self._config.base_dir = self.root
        return self._config

    @property
    def store(self) -> CorpusStore:
        if self._store is None:
            self._store = CorpusStore(self.root / "corpus")
        return self._store

    def wiring(self):
        """(agents, retriever) built once per invocation."""
        if self._wiring is None:
            config = self.config
            clock = SimulatedClock() if config.all_mock() else SystemClock()
            call_log = CallLog(self.root / "gateway.log")
            gateways = build_gateways(config, call_log, clock)
            agents = build_agents(config, gateways)
            retriever = build_retriever(config, self.store,
                                        gateways["embedder"])
            self._wiring = (agents, retriever)
        return self._wiring

    def agents(self) -> dict:
        return self.wiring()[0]

    def retriever(self):
        agents, retriever = self.wiring()
        retriever.build_article_vectors(
            cache_base=self.root / "vectors" / "articles")
        return retriever

    # -- artifact paths --

    @property
    def cases_file(self) -> Path:
        return self.root / "cases" / "cases.jsonl"

    @property
    def rejections_file(self) -> Path:
        return self.root / "cases" / "rejections.jsonl"

    def trial_file(self, case_id: str) -> Path:
        return self.root / "trials" / f"{case_id}.json"

    def judgment_file(self, case_id: str) -> Path:
        return self.root / "judgments" / f"{case_id}.json"

    # -- lookups --

    def forged_cases(self) -> list[LegalCase]:
        if not self.cases_file.exists():
            return []
        return [LegalCase.from_json(obj) for obj in read_jsonl(self.cases_file)]

    def find_case(self, case_id: str) -> LegalCase:
        for case in self.forged_cases():
            if case.case_id == case_id:
                return case
        raise click.UsageError(
            f"no case {case_id!r} in {self.cases_file} (run `forge` first)")

    def case_facts(self, case_id: str) -> str:
        """Query text for retrieval verbs: a forged case's facts, or a
        corpus case's full text."""
        for case in self.forged_cases():
            if case.case_id == case_id:
                return case.facts
        store = self.store
        if case_id in store.case_ids():
            return store.get_case(case_id).full_text
        raise click.UsageError(f"no case {case_id!r} in the workspace or "
                               "the case corpus")

    def load_transcript(self, case_id: str) -> Transcript:
        path = self.trial_file(case_id)
        if not path.exists():
            raise click.UsageError(f"no transcript for {case_id!r} at {path} "
                                   "(run `trial run` first)")
        return Transcript.from_json(read_json(path), rounds=self.config.rounds)


def fallible(fn):
    """Map domain errors to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo("configuration errors:", err=True)
            for error in exc.errors:
                click.echo(f"  - {error}", err=True)
            sys.exit(EXIT_VALIDATION)
        except FileNotFoundError as exc:
            click.echo(str(exc), err=True)
            sys.exit(EXIT_VALIDATION)
        except MootcourtError as exc:
            click.echo(f"{type(exc).__name__}: {exc}", err=True)
            sys.exit(EXIT_STAGE_FAILURE)

    return wrapper


@click.group()
@click.option("--workspace", "-w", type=click.Path(path_type=Path),
              default=Path("."), show_default=True, envvar="MOOTCOURT_WORKSPACE",
              help="Directory holding the corpus and artifacts.")
@click.option("--config", "-c", "config_path", type=click.Path(path_type=Path),
              default=None, help="TOML settings file (defaults apply without one).")
@click.pass_context
def main(ctx, workspace: Path, config_path: Path | None):
    """Simulated-court pipeline: generate cases, argue them, judge them,
    and score the judgments."""
    ctx.obj = Workspace(workspace, config_path)


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


@main.group()
def corpus():
    """Ingest statute articles and precedent cases."""


@corpus.command("ingest-articles")
@click.argument("path", type=click.Path(exists=True, path_type=Path))
@click.pass_obj
@fallible
def ingest_articles(ws: Workspace, path: Path):
    """Load an article JSONL file into the corpus."""
    count = ws.store.ingest_articles(path)
    click.echo(f"ingested {count} articles ({ws.store.n_articles} total)")


@corpus.command("ingest-cases")
@click.argument("path", type=click.Path(exists=True, path_type=Path))
@click.option("--redact", type=click.Path(exists=True, path_type=Path),
              default=None, help="JSONL file of pattern/replacement rules.")
@click.pass_obj
@fallible
def ingest_cases(ws: Workspace, path: Path, redact: Path | None):
    """Load a case JSONL file into the corpus, optionally redacting."""
    rules = load_redaction_rules(redact) if redact else []
    count = ws.store.ingest_cases(path, rules)
    click.echo(f"ingested {count} cases ({ws.store.n_cases} total)")


# ---------------------------------------------------------------------------
# forge
# ---------------------------------------------------------------------------


@main.command()
@click.option("--n", "n_target", type=int, required=True,
              help="Accepted cases to produce.")
@click.option("--seed", type=int, default=None,
              help="Sampling seed (defaults to the config seed).")
@click.option("--max-attempts", type=int, default=None,
              help="Attempt budget per accepted case.")
@click.option("--category", type=str, default=None,
              help="Restrict generation to one article category.")
@click.pass_obj
@fallible
def forge(ws: Workspace, n_target: int, seed: int | None,
          max_attempts: int | None, category: str | None):
    """Generate synthetic cases by rejection sampling."""
    config = ws.config
    result = forge_batch(
        ws.store, ws.agents()["case_generator"], ws.agents()["evaluator"],
        n_target=n_target,
        max_attempts_per_case=max_attempts or config.max_attempts_per_case,
        seed=seed if seed is not None else config.seed,
        articles_per_case=config.articles_per_case, category=category)
    write_jsonl(ws.cases_file, [c.to_json() for c in result.cases])
    write_jsonl(ws.rejections_file, result.rejections)
    stats = result.stats
    click.echo(f"accepted {stats.accepted}/{stats.attempts} attempts "
               f"(rate {stats.acceptance_rate:.2f}) -> {ws.cases_file}")


# ---------------------------------------------------------------------------
# trial
# ---------------------------------------------------------------------------


def _trial_agents(ws: Workspace) -> TrialAgents:
    agents = ws.agents()
    return TrialAgents(plaintiff=agents["lawyer_plaintiff"],
                       defendant=agents["lawyer_defendant"],
                       evaluator=agents["evaluator"])


def _advance_trial(ws: Workspace, case_id: str, transcript: Transcript) -> None:
    case = ws.find_case(case_id)
    config = ws.config
    path = ws.trial_file(case_id)
    refine = 0 if config.ablations.no_evolution else config.refine_iterations
    try:
        transcript = resume_trial(transcript, case, _trial_agents(ws),
                                  ws.retriever(), refine_iterations=refine,
                                  rounds=config.rounds)
    except TrialAborted as exc:
        if exc.transcript is not None:
            write_json(path, exc.transcript.to_json())
            click.echo(f"partial transcript kept at {path}", err=True)
        raise
    write_json(path, transcript.to_json())
    click.echo(f"{len(transcript.turns)} turns -> {path}")


@main.group()
def trial():
    """Run the turn-based court argument for a case."""


@trial.command("run")
@click.option("--case", "case_id", required=True, help="Case id to argue.")
@click.pass_obj
@fallible
def trial_run(ws: Workspace, case_id: str):
    """Argue a case from the opening statements."""
    _advance_trial(ws, case_id, Transcript(case_id=case_id))


@trial.command("resume")
@click.option("--case", "case_id", required=True, help="Case id to continue.")
@click.pass_obj
@fallible
def trial_resume(ws: Workspace, case_id: str):
    """Continue an interrupted trial from its saved transcript."""
    path = ws.trial_file(case_id)
    if path.exists():
        transcript = ws.load_transcript(case_id)
        if transcript.status == STATUS_COMPLETE:
            click.echo(f"transcript already complete at {path}")
            return
    else:
        transcript = Transcript(case_id=case_id)
    _advance_trial(ws, case_id, transcript)


# ---------------------------------------------------------------------------
# retrieval
# ---------------------------------------------------------------------------


@main.group()
def retrieve():
    """Query the precedent and article indexes."""


@retrieve.command("precedent")
@click.option("--case", "case_id", required=True)
@click.pass_obj
@fallible
def retrieve_precedent(ws: Workspace, case_id: str):
    """Most similar adjudicated case for the given case."""
    facts = ws.case_facts(case_id)
    hit = ws.retriever().retrieve_precedent(facts)
    if hit is None:
        click.echo("no precedent found (empty case corpus or no lexical overlap)")
        return
    click.echo(f"{hit.case_id}  {hit.case_name}  ({hit.action_cause})")


@retrieve.command("articles")
@click.option("--case", "case_id", required=True)
@click.option("-k", type=int, default=None,
              help="Results to return (default: the config cutoff).")
@click.pass_obj
@fallible
def retrieve_articles(ws: Workspace, case_id: str, k: int | None):
    """Top statute articles for the given case."""
    facts = ws.case_facts(case_id)
    hits = ws.retriever().retrieve_articles(facts, k=k)
    for hit in hits:
        click.echo(f"{hit.rank:4d}  {hit.doc_id}  {hit.score:.6f}")


@main.group()
def retriever():
    """Build and evaluate retrieval data."""


@retriever.command("build-train-data")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Output JSONL (default <workspace>/train/training.jsonl).")
@click.pass_obj
@fallible
def build_train_data(ws: Workspace, out: Path | None):
    """Contrastive training examples from forged cases: gold articles
    positive, lexically confusable non-gold articles negative."""
    cases = ws.forged_cases()
    if not cases:
        raise click.UsageError("no forged cases; run `forge` first")
    examples = ws.retriever().build_training_data(cases)
    out = out or ws.root / "train" / "training.jsonl"
    write_jsonl(out, [e.to_json() for e in examples])
    click.echo(f"{len(examples)} examples -> {out}")


@retriever.command("eval")
@click.option("--ks", default="100,200,500,1000", show_default=True,
              help="Comma-separated cutoffs.")
@click.pass_obj
@fallible
def retriever_eval(ws: Workspace, ks: str):
    """Gold-article recall of the dense article cascade at several depths."""
    try:
        cutoffs = sorted({int(part) for part in ks.split(",") if part.strip()})
    except ValueError:
        raise click.UsageError(f"--ks must be comma-separated integers: {ks!r}")
    if not cutoffs:
        raise click.UsageError("--ks names no cutoffs")
    cases = ws.forged_cases()
    if not cases:
        raise click.UsageError("no forged cases; run `forge` first")
    engine = ws.retriever()
    results = {c.case_id: [h.doc_id
                           for h in engine.retrieve_articles(c.facts,
                                                             k=max(cutoffs))]
               for c in cases}
    gold = {c.case_id: set(c.gold_articles) for c in cases}
    report = recall_at_k(results, gold, ks=cutoffs)
    for k in cutoffs:
        click.echo(f"recall@{k}: {report.per_k[k]:.4f}")
    click.echo(f"queries: {report.n_queries}")


# ---------------------------------------------------------------------------
# evolve
# ---------------------------------------------------------------------------


@main.group()
def evolve():
    """Work with scored argument variants."""


@evolve.command("export-dpo")
@click.option("--trials", "trials_dir", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Directory of transcript JSON files.")
@click.option("--out", required=True, type=click.Path(path_type=Path),
              help="Preference-pair JSONL to write.")
@click.pass_obj
@fallible
def export_dpo(ws: Workspace, trials_dir: Path, out: Path):
    """Chosen/rejected argument pairs from every complete transcript."""
    stats = DpoStats()
    records = []
    for path in sorted(trials_dir.glob("*.json")):
        transcript = Transcript.from_json(read_json(path),
                                          rounds=ws.config.rounds)
        records.extend(p.to_json() for p in emit_dpo_pairs(transcript, stats))
    write_jsonl(out, records)
    click.echo(f"{stats.pairs} pairs -> {out} "
               f"(skipped: {stats.skipped_zero_spread} zero-spread, "
               f"{stats.skipped_unscored} unscored)")


# ---------------------------------------------------------------------------
# judge
# ---------------------------------------------------------------------------


@main.command()
@click.option("--case", "case_id", required=True)
@click.option("--no-argument", is_flag=True,
              help="Judge without the court argument record.")
@click.option("--no-retrieval", is_flag=True,
              help="Judge without retrieved precedent and articles.")
@click.pass_obj
@fallible
def judge(ws: Workspace, case_id: str, no_argument: bool, no_retrieval: bool):
    """Predict articles, outcome, and analysis for an argued case."""
    case = ws.find_case(case_id)
    transcript = None if no_argument else ws.load_transcript(case_id)
    engine = None if no_retrieval else ws.retriever()
    ctx = assemble_context(case, engine, transcript=transcript,
                           no_argument=no_argument, no_retrieval=no_retrieval,
                           article_budget=ws.config.article_context_budget)
    judgment = render_judgment(ctx, ws.agents()["judge"], ws.store)
    path = ws.judgment_file(case_id)
    write_json(path, judgment.to_json())
    click.echo(f"{len(judgment.predicted_articles)} articles cited -> {path}")
    for warning in judgment.warnings:
        click.echo(f"warning: {warning}", err=True)


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@main.group(name="eval")
def eval_group():
    """Score predicted judgments against references."""


@eval_group.command("report")
@click.option("--judgments", "judgments_dir", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="Directory of judgment JSON files.")
@click.option("--refs", "refs_file", required=True,
              type=click.Path(exists=True, path_type=Path),
              help="JSONL of case references.")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Also write the report JSON here.")
@click.pass_obj
@fallible
def eval_report(ws: Workspace, judgments_dir: Path, refs_file: Path,
                out: Path | None):
    """Aggregate article/outcome metrics over a judgment set."""
    from .adjudication import Judgment

    judgments = [Judgment.from_json(read_json(path))
                 for path in sorted(judgments_dir.glob("*.json"))]
    references = [CaseReference.from_json(obj)
                  for obj in read_jsonl(refs_file)]
    report = build_report(judgments, references, ws.agents()["evaluator"])
    if out is not None:
        write_json(out, report)
    click.echo(render_report_table(report))


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


@main.command(name="run")
@click.option("--config", "config_file", required=True,
              type=click.Path(path_type=Path), help="TOML run settings.")
@fallible
def run_cmd(config_file: Path):
    """Execute the full pipeline (forge, trial, pairs, judge, report)."""
    config = validate_config(config_file)

    def progress(stage: str, status: str) -> None:
        click.echo(f"[{stage}] {status}")

    manifest = run_pipeline(config, progress=progress)
    run_dir = config.runs_root_path / manifest.run_id
    click.echo(f"run {manifest.run_id} complete -> {run_dir}")


if __name__ == "__main__":
    main()
