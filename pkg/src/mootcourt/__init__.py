"""Simulated-court pipeline: synthetic case generation, adversarial lawyer
self-play with rubric-scored refinement, hybrid retrieval, judgment
prediction, and evaluation."""

from .adjudication import Judgment, assemble_context, render_judgment
from .config import RunConfig, validate_config
from .corpus import CorpusCase, CorpusStore, LawArticle
from .errors import ConfigError, MootcourtError, StageError
from .evolution import ArgumentScore, PreferencePair, emit_dpo_pairs, refine_turn
from .forge import LegalCase, forge_batch
from .gateway import CallLog, ChatAgent, Gateway, MockProvider
from .metrics import (
    CaseReference,
    article_prf,
    build_report,
    extract_article_refs,
    extract_criminal,
    match_civil,
    summarize_civil,
)
from .pipeline import Pipeline, RunManifest, run_pipeline
from .retrieval import Retriever, bm25_search, recall_at_k
from .trial import Transcript, TrialAgents, run_full_trial

__version__ = "0.1.0"

__all__ = [
    "ArgumentScore",
    "CallLog",
    "CaseReference",
    "ChatAgent",
    "ConfigError",
    "CorpusCase",
    "CorpusStore",
    "Gateway",
    "Judgment",
    "LawArticle",
    "LegalCase",
    "MockProvider",
    "MootcourtError",
    "Pipeline",
    "PreferencePair",
    "Retriever",
    "RunConfig",
    "RunManifest",
    "StageError",
    "Transcript",
    "TrialAgents",
    "article_prf",
    "assemble_context",
    "bm25_search",
    "build_report",
    "emit_dpo_pairs",
    "extract_article_refs",
    "extract_criminal",
    "forge_batch",
    "match_civil",
    "refine_turn",
    "render_judgment",
    "run_full_trial",
    "run_pipeline",
    "summarize_civil",
    "validate_config",
    "__version__",
]
