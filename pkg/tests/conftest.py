"""Shared fixture builders for corpus, trial, and pipeline tests."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from mootcourt.corpus import CorpusStore

STATUTES = ("民法典", "刑法", "劳动法")


def article_record(i: int, category: str = "civil_admin", *,
                   statute: str | None = None, body: str | None = None) -> dict:
    return {
        "article_id": f"art-{i:03d}",
        "statute_name": statute or STATUTES[i % len(STATUTES)],
        "article_number": i,
        "body": body or f"第{i}条 当事人应当按照约定全面履行自己的义务 条款{i}",
        "category": category,
    }


def case_record(i: int, *, stage: str = "first_instance",
                relevant: list[str] | None = None,
                full_text: str | None = None) -> dict:
    return {
        "case_id": f"case-{i:03d}",
        "case_name": f"某与某合同纠纷案{i}",
        "action_cause": "合同纠纷",
        "stage": stage,
        "relevant_articles": relevant if relevant is not None else [f"art-{i:03d}"],
        "full_text": full_text or f"原告与被告因合同纠纷诉至法院 案情编号{i}",
    }


def write_jsonl_file(path: Path, records: list[dict]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    return path


@pytest.fixture
def article_file(tmp_path):
    def make(records: list[dict], name: str = "articles.jsonl") -> Path:
        return write_jsonl_file(tmp_path / name, records)

    return make


@pytest.fixture
def loaded_store(tmp_path):
    """In-memory store preloaded with n articles (factory)."""

    def make(n: int = 10, category: str = "civil_admin") -> CorpusStore:
        store = CorpusStore()
        path = write_jsonl_file(tmp_path / f"arts-{n}-{category}.jsonl",
                                [article_record(i, category) for i in range(1, n + 1)])
        store.ingest_articles(path)
        return store

    return make
