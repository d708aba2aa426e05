"""Full-loop orchestration: forge cases, run trials, export preference
pairs, judge, and report, with a manifest that makes reruns resumable.

Every artifact lands under runs/<run_id>/, where run_id is derived from the
config digest. Stages run in a fixed order; a completed stage is never
re-executed, and within the trial and judge stages per-case artifacts found
on disk are skipped too, so a killed run continues near where it stopped.
All-mock configs run on a simulated clock, which makes two runs of the same
config byte-identical, manifest included.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .adjudication import Judgment, assemble_context, render_judgment
from .clock import Clock, SimulatedClock, SystemClock
from .config import ROLE_NAMES, RoleConfig, RunConfig
from .corpus import CorpusStore
from .errors import StageError, TrialAborted
from .evolution import DpoStats, emit_dpo_pairs
from .forge import LegalCase, forge_batch
from .gateway import (
    CallLog,
    ChatAgent,
    Gateway,
    HttpProvider,
    MockProvider,
    ProviderConfig,
)
from .jsonio import read_json, read_jsonl, write_json, write_jsonl
from .metrics import CaseReference, build_report, render_report_table
from .retrieval import Retriever
from .trial import STATUS_COMPLETE, Transcript, TrialAgents, resume_trial

STAGES = ("forge", "trial", "pairs", "judge", "report")

STAGE_PENDING = "pending"
STAGE_RUNNING = "running"
STAGE_COMPLETE = "complete"
STAGE_FAILED = "failed"

_RANK = {STAGE_PENDING: 0, STAGE_RUNNING: 1, STAGE_FAILED: 1, STAGE_COMPLETE: 2}

Progress = Callable[[str, str], None]


@dataclass
class RunManifest:
    """Persistent record of one run: identity, stage states, call counts."""

    run_id: str
    config_digest: str
    created_at: float
    config: dict
    corpus: dict = field(default_factory=dict)
    stages: dict[str, dict] = field(default_factory=dict)
    gateway_calls: dict[str, int] = field(default_factory=dict)

    @classmethod
    def fresh(cls, config: RunConfig, now: float) -> "RunManifest":
        stages = {name: {"status": STAGE_PENDING, "started_at": None,
                         "finished_at": None, "detail": {}, "error": None}
                  for name in STAGES}
        return cls(run_id=config.run_id, config_digest=config.digest(),
                   created_at=now, config=config.effective(), stages=stages)

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        data = read_json(path)
        return cls(run_id=data["run_id"], config_digest=data["config_digest"],
                   created_at=data["created_at"], config=data["config"],
                   corpus=data.get("corpus", {}), stages=data["stages"],
                   gateway_calls=data.get("gateway_calls", {}))

    def save(self, path: str | Path) -> None:
        write_json(path, {
            "run_id": self.run_id,
            "config_digest": self.config_digest,
            "created_at": self.created_at,
            "config": self.config,
            "corpus": self.corpus,
            "stages": self.stages,
            "gateway_calls": self.gateway_calls,
        })

    def status(self, stage: str) -> str:
        return self.stages[stage]["status"]

    def is_complete(self, stage: str) -> bool:
        return self.status(stage) == STAGE_COMPLETE

    def all_complete(self) -> bool:
        return all(self.is_complete(name) for name in STAGES)

    def _transition(self, stage: str, status: str) -> None:
        current = self.status(stage)
        if _RANK[status] < _RANK[current]:
            raise StageError(stage, f"cannot move {current} -> {status}; "
                             "stages only progress forward")
        self.stages[stage]["status"] = status

    def mark_running(self, stage: str, now: float) -> None:
        self._transition(stage, STAGE_RUNNING)
        entry = self.stages[stage]
        entry["started_at"] = now
        entry["error"] = None

    def mark_complete(self, stage: str, now: float, detail: dict) -> None:
        self._transition(stage, STAGE_COMPLETE)
        entry = self.stages[stage]
        entry["finished_at"] = now
        entry["detail"] = detail

    def mark_failed(self, stage: str, now: float, error: str) -> None:
        self._transition(stage, STAGE_FAILED)
        entry = self.stages[stage]
        entry["finished_at"] = now
        entry["error"] = error


# ---------------------------------------------------------------------------
# agent wiring
# ---------------------------------------------------------------------------


def build_provider(rc: RoleConfig):
    if rc.provider == "mock":
        return MockProvider.pure()
    return HttpProvider(ProviderConfig(endpoint_url=rc.endpoint_url,
                                       api_key_env_var=rc.api_key_env_var,
                                       max_retries=rc.max_retries,
                                       requests_per_minute=rc.requests_per_minute))


def build_gateways(config: RunConfig, call_log: CallLog,
                   clock: Clock) -> dict[str, Gateway]:
    gateways = {}
    for role in ROLE_NAMES:
        rc = config.roles[role]
        gateways[role] = Gateway(build_provider(rc), role=role,
                                 max_retries=rc.max_retries,
                                 requests_per_minute=rc.requests_per_minute,
                                 clock=clock, call_log=call_log)
    return gateways


def build_agents(config: RunConfig,
                 gateways: dict[str, Gateway]) -> dict[str, ChatAgent]:
    agents = {}
    for role in ROLE_NAMES:
        if role == "embedder":
            continue
        rc = config.roles[role]
        agents[role] = ChatAgent(gateways[role], model_id=rc.model_id,
                                 temperature=rc.temperature,
                                 max_output_tokens=rc.max_output_tokens)
    return agents


def build_retriever(config: RunConfig, store: CorpusStore,
                    embed_gateway: Gateway) -> Retriever:
    return Retriever(store, embed_gateway, config.roles["embedder"].model_id,
                     case_bm25_k=config.cutoffs.case_bm25_k,
                     article_dense_k=config.cutoffs.article_dense_k,
                     train_neg_k=config.cutoffs.train_neg_k)


def load_corpus(config: RunConfig) -> CorpusStore:
    """In-memory store from the corpus files the config names."""
    for label, path in (("corpus.articles", config.corpus_articles_path),
                        ("corpus.cases", config.corpus_cases_path)):
        if not path.exists():
            raise FileNotFoundError(f"{label}: no such file: {path}")
    store = CorpusStore()
    store.ingest_articles(config.corpus_articles_path)
    store.ingest_cases(config.corpus_cases_path)
    return store


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# run directory
# ---------------------------------------------------------------------------


@dataclass
class RunPaths:
    root: Path

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.json"

    @property
    def cases(self) -> Path:
        return self.root / "cases" / "cases.jsonl"

    @property
    def rejections(self) -> Path:
        return self.root / "cases" / "rejections.jsonl"

    @property
    def trials(self) -> Path:
        return self.root / "trials"

    def trial(self, case_id: str) -> Path:
        return self.trials / f"{case_id}.json"

    @property
    def pairs(self) -> Path:
        return self.root / "pairs" / "pairs.jsonl"

    @property
    def judgments(self) -> Path:
        return self.root / "judgments"

    def judgment(self, case_id: str) -> Path:
        return self.judgments / f"{case_id}.json"

    @property
    def references(self) -> Path:
        return self.root / "report" / "references.jsonl"

    @property
    def report(self) -> Path:
        return self.root / "report" / "report.json"

    @property
    def report_table(self) -> Path:
        return self.root / "report" / "report.txt"

    @property
    def vector_cache(self) -> Path:
        return self.root / "vectors" / "articles"

    @property
    def gateway_log(self) -> Path:
        return self.root / "gateway.log"


def load_run_cases(paths: RunPaths) -> list[LegalCase]:
    return [LegalCase.from_json(obj) for obj in read_jsonl(paths.cases)]


def load_transcript(paths: RunPaths, case_id: str, rounds: int) -> Transcript:
    return Transcript.from_json(read_json(paths.trial(case_id)), rounds=rounds)


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------


class Pipeline:
    """One run of the full loop against one config."""

    def __init__(self, config: RunConfig, *, clock: Clock | None = None,
                 progress: Progress | None = None):
        config.validate()
        self.config = config
        if clock is None:
            clock = SimulatedClock() if config.all_mock() else SystemClock()
        self.clock = clock
        self.progress = progress or (lambda stage, status: None)
        self.paths = RunPaths(config.runs_root_path / config.run_id)
        self.paths.root.mkdir(parents=True, exist_ok=True)
        self.call_log = CallLog(self.paths.gateway_log)
        self.store = load_corpus(config)
        self.gateways = build_gateways(config, self.call_log, self.clock)
        self.agents = build_agents(config, self.gateways)
        self.retriever = build_retriever(config, self.store,
                                         self.gateways["embedder"])
        if self.paths.manifest.exists():
            self.manifest = RunManifest.load(self.paths.manifest)
            if self.manifest.config_digest != config.digest():
                raise StageError(
                    "manifest", f"run directory {self.paths.root} belongs to "
                    f"config digest {self.manifest.config_digest}, not "
                    f"{config.digest()}")
        else:
            self.manifest = RunManifest.fresh(config, self.clock.now())
            self._record_corpus()
            self._save_manifest()

    def _record_corpus(self) -> None:
        self.manifest.corpus = {
            "articles": self.config.corpus_articles,
            "cases": self.config.corpus_cases,
            "articles_sha256": _sha256_file(self.config.corpus_articles_path),
            "cases_sha256": _sha256_file(self.config.corpus_cases_path),
            "n_articles": self.store.n_articles,
            "n_cases": self.store.n_cases,
        }

    def _save_manifest(self) -> None:
        self.manifest.gateway_calls = {
            role: len(self.call_log.by_role(role)) for role in ROLE_NAMES}
        self.manifest.save(self.paths.manifest)

    def run(self) -> RunManifest:
        """Execute every stage not already complete, in order."""
        stage_fns = {"forge": self._stage_forge, "trial": self._stage_trial,
                     "pairs": self._stage_pairs, "judge": self._stage_judge,
                     "report": self._stage_report}
        for name in STAGES:
            if self.manifest.is_complete(name):
                self.progress(name, "skipped")
                continue
            self.progress(name, STAGE_RUNNING)
            self.manifest.mark_running(name, self.clock.now())
            self._save_manifest()
            try:
                detail = stage_fns[name]()
            except Exception as exc:
                self.manifest.mark_failed(name, self.clock.now(), str(exc))
                self._save_manifest()
                self.progress(name, STAGE_FAILED)
                if isinstance(exc, StageError):
                    raise
                raise StageError(name, str(exc)) from exc
            self.manifest.mark_complete(name, self.clock.now(), detail)
            self._save_manifest()
            self.progress(name, STAGE_COMPLETE)
        return self.manifest

    # -- stages --

    def _stage_forge(self) -> dict:
        result = forge_batch(self.store, self.agents["case_generator"],
                             self.agents["evaluator"],
                             n_target=self.config.n_cases,
                             max_attempts_per_case=self.config.max_attempts_per_case,
                             seed=self.config.seed,
                             articles_per_case=self.config.articles_per_case)
        write_jsonl(self.paths.cases, [c.to_json() for c in result.cases])
        write_jsonl(self.paths.rejections, result.rejections)
        return {"stats": result.stats.to_json(), "cases": len(result.cases)}

    def _refine_iterations(self) -> int:
        if self.config.ablations.no_evolution:
            return 0
        return self.config.refine_iterations

    def _trial_agents(self) -> TrialAgents:
        return TrialAgents(plaintiff=self.agents["lawyer_plaintiff"],
                           defendant=self.agents["lawyer_defendant"],
                           evaluator=self.agents["evaluator"])

    def _ensure_vectors(self) -> None:
        self.retriever.build_article_vectors(cache_base=self.paths.vector_cache)

    def _run_one_trial(self, case: LegalCase, agents: TrialAgents) -> bool:
        """True if the trial ran (fully or from a partial transcript);
        False if a complete transcript was already on disk."""
        path = self.paths.trial(case.case_id)
        if path.exists():
            transcript = load_transcript(self.paths, case.case_id,
                                         self.config.rounds)
            if transcript.status == STATUS_COMPLETE:
                return False
        else:
            transcript = Transcript(case_id=case.case_id)
        try:
            transcript = resume_trial(transcript, case, agents, self.retriever,
                                      refine_iterations=self._refine_iterations(),
                                      rounds=self.config.rounds)
        except TrialAborted as exc:
            # keep the partial transcript so the rerun continues mid-trial
            if exc.transcript is not None:
                write_json(path, exc.transcript.to_json())
            raise
        write_json(path, transcript.to_json())
        return True

    def _over_cases(self, work: Callable[[LegalCase], bool]) -> dict:
        cases = load_run_cases(self.paths)
        ran = skipped = 0
        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                outcomes = list(pool.map(work, cases))
        else:
            outcomes = [work(case) for case in cases]
        for outcome in outcomes:
            ran += outcome
            skipped += not outcome
        return {"cases": len(cases), "ran": ran, "skipped": skipped}

    def _stage_trial(self) -> dict:
        self._ensure_vectors()
        agents = self._trial_agents()
        return self._over_cases(lambda case: self._run_one_trial(case, agents))

    def _stage_pairs(self) -> dict:
        cases = load_run_cases(self.paths)
        stats = DpoStats()
        records = []
        for case in cases:
            transcript = load_transcript(self.paths, case.case_id,
                                         self.config.rounds)
            records.extend(pair.to_json()
                           for pair in emit_dpo_pairs(transcript, stats))
        write_jsonl(self.paths.pairs, records)
        return {"stats": stats.to_json(), "pairs": len(records)}

    def _judge_one(self, case: LegalCase) -> bool:
        path = self.paths.judgment(case.case_id)
        if path.exists():
            return False
        ablations = self.config.ablations
        transcript = None
        if not ablations.no_argument:
            transcript = load_transcript(self.paths, case.case_id,
                                         self.config.rounds)
        ctx = assemble_context(case, self.retriever, transcript=transcript,
                               no_argument=ablations.no_argument,
                               no_retrieval=ablations.no_retrieval,
                               article_budget=self.config.article_context_budget)
        judgment = render_judgment(ctx, self.agents["judge"], self.store)
        write_json(path, judgment.to_json())
        return True

    def _stage_judge(self) -> dict:
        if not self.config.ablations.no_retrieval:
            self._ensure_vectors()
        return self._over_cases(self._judge_one)

    def _stage_report(self) -> dict:
        cases = load_run_cases(self.paths)
        # forged cases carry gold articles but no gold outcome text, so the
        # references drive the article metrics only
        references = [CaseReference(case_id=case.case_id,
                                    category=case.category,
                                    gold_articles=list(case.gold_articles))
                      for case in cases]
        write_jsonl(self.paths.references, [r.to_json() for r in references])
        judgments = [Judgment.from_json(read_json(self.paths.judgment(c.case_id)))
                     for c in cases]
        report = build_report(judgments, references, self.agents["evaluator"])
        write_json(self.paths.report, report)
        self.paths.report_table.write_text(render_report_table(report) + "\n",
                                           encoding="utf-8")
        return {"cases": len(cases), "warnings": len(report["warnings"])}


def run_pipeline(config: RunConfig, *, clock: Clock | None = None,
                 progress: Progress | None = None) -> RunManifest:
    return Pipeline(config, clock=clock, progress=progress).run()
