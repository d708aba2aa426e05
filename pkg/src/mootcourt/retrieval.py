"""Lexical BM25 search, embedding rerank, retrieval cascades, and Recall@K.

Two cascades: precedents go BM25 top-100 then embedding rerank to 1; statute
articles are dense-only top-200 over a precomputed vector store. The module
also builds contrastive training examples (gold positives, BM25 negatives)
and evaluates any embedding endpoint with Recall@K.
"""

from __future__ import annotations

import hashlib
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CorpusCase, CorpusStore
from .errors import DuplicateIdError, RetrievalNotReadyError
from .gateway import EmbeddingRequest, Gateway
from .jsonio import read_json, write_json

DEFAULT_K1 = 1.5
DEFAULT_B = 0.75

CASE_BM25_K = 100
ARTICLE_DENSE_K = 200
TRAIN_NEG_K = 50

_CJK_RANGES = ((0x3400, 0x4DBF), (0x4E00, 0x9FFF), (0xF900, 0xFAFF))


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return any(lo <= code <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    """CJK runs as overlapping character bigrams (a lone CJK char stays
    itself); everything else lowercased and split on non-alphanumerics."""
    tokens: list[str] = []
    cjk_run: list[str] = []
    word_run: list[str] = []

    def flush_cjk():
        if len(cjk_run) == 1:
            tokens.append(cjk_run[0])
        else:
            tokens.extend(cjk_run[i] + cjk_run[i + 1] for i in range(len(cjk_run) - 1))
        cjk_run.clear()

    def flush_word():
        if word_run:
            tokens.append("".join(word_run).lower())
            word_run.clear()

    for ch in text:
        if _is_cjk(ch):
            flush_word()
            cjk_run.append(ch)
        elif ch.isalnum():
            if cjk_run:
                flush_cjk()
            word_run.append(ch)
        else:
            if cjk_run:
                flush_cjk()
            flush_word()
    if cjk_run:
        flush_cjk()
    flush_word()
    return tokens


@dataclass(frozen=True)
class RankedHit:
    doc_id: str
    score: float
    rank: int


class Bm25Index:
    """Okapi BM25 with IDF = ln((N - df + 0.5)/(df + 0.5) + 1). Immutable."""

    def __init__(self, doc_ids: list[str], doc_tokens: list[list[str]],
                 k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        self.doc_ids = list(doc_ids)
        self.k1 = k1
        self.b = b
        self.doc_lengths = [len(toks) for toks in doc_tokens]
        n = len(self.doc_ids)
        self.avg_doc_length = sum(self.doc_lengths) / n if n else 0.0
        self.postings: dict[str, list[tuple[int, int]]] = {}
        for ordinal, toks in enumerate(doc_tokens):
            counts: dict[str, int] = {}
            for t in toks:
                counts[t] = counts.get(t, 0) + 1
            for term, tf in counts.items():
                self.postings.setdefault(term, []).append((ordinal, tf))

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    def search(self, query: str, k: int) -> list[RankedHit]:
        if k <= 0:
            raise ValueError("k must be positive")
        query_tokens = tokenize(query)
        if not query_tokens or not self.doc_ids or self.avg_doc_length == 0:
            return []
        n = self.n_docs
        scores: dict[int, float] = {}
        for term in query_tokens:
            plist = self.postings.get(term)
            if not plist:
                continue
            df = len(plist)
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1.0)
            for ordinal, tf in plist:
                norm = 1.0 - self.b + self.b * self.doc_lengths[ordinal] / self.avg_doc_length
                contribution = idf * (tf * (self.k1 + 1.0)) / (tf + self.k1 * norm)
                scores[ordinal] = scores.get(ordinal, 0.0) + contribution
        ranked = sorted(((self.doc_ids[o], s) for o, s in scores.items() if s > 0.0),
                        key=lambda pair: (-pair[1], pair[0]))[:k]
        return [RankedHit(doc_id=d, score=s, rank=i + 1)
                for i, (d, s) in enumerate(ranked)]


def build_index(docs: Sequence[tuple[str, str]], k1: float = DEFAULT_K1,
                b: float = DEFAULT_B) -> Bm25Index:
    seen = set()
    for doc_id, _ in docs:
        if doc_id in seen:
            raise DuplicateIdError(f"duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
    return Bm25Index([d for d, _ in docs], [tokenize(t) for _, t in docs], k1=k1, b=b)


def bm25_search(index: Bm25Index, query: str, k: int) -> list[RankedHit]:
    return index.search(query, k)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


def rerank(query: str, hits: Sequence[RankedHit], texts: Mapping[str, str],
           gateway: Gateway, model_id: str, m: int) -> list[RankedHit]:
    """Reorder BM25 hits by embedding cosine similarity, truncated to m.

    Ties keep the prior BM25 order. Never introduces doc_ids not in `hits`.
    """
    if not hits:
        raise ValueError("hits must be non-empty")
    if m <= 0:
        raise ValueError("m must be positive")
    payload = [query] + [texts[h.doc_id] for h in hits]
    vectors = gateway.embed(EmbeddingRequest(model_id=model_id, texts=payload))
    qv = np.asarray(vectors[0], dtype=np.float64)
    sims = [cosine(qv, np.asarray(v, dtype=np.float64)) for v in vectors[1:]]
    order = sorted(range(len(hits)), key=lambda i: (-sims[i], i))[:m]
    return [RankedHit(doc_id=hits[i].doc_id, score=sims[i], rank=pos + 1)
            for pos, i in enumerate(order)]


class VectorStore:
    """Document embeddings cached as little-endian float32 rows plus a JSON
    sidecar {model_id, dimension, ids}. Immutable once built."""

    def __init__(self, model_id: str, ids: list[str], matrix: np.ndarray):
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError("matrix must have one row per id")
        self.model_id = model_id
        self.ids = list(ids)
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self._row: dict[str, int] = {doc_id: i for i, doc_id in enumerate(ids)}

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[1]) if self.matrix.size else 0

    def vector(self, doc_id: str) -> np.ndarray:
        return self.matrix[self._row[doc_id]]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._row

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(cls, docs: Sequence[tuple[str, str]], gateway: Gateway,
              model_id: str, batch_size: int = 64) -> "VectorStore":
        ids = [d for d, _ in docs]
        rows: list[list[float]] = []
        for start in range(0, len(docs), batch_size):
            chunk = [t for _, t in docs[start:start + batch_size]]
            rows.extend(gateway.embed(EmbeddingRequest(model_id=model_id, texts=chunk)))
        matrix = np.asarray(rows, dtype=np.float32) if rows else np.zeros((0, 0), np.float32)
        return cls(model_id, ids, matrix)

    def save(self, base: str | Path) -> None:
        base = Path(base)
        base.parent.mkdir(parents=True, exist_ok=True)
        data = self.matrix.astype("<f4").tobytes()
        binary = base.parent / (base.name + ".f32")
        tmp = base.parent / (base.name + ".f32.tmp")
        tmp.write_bytes(data)
        tmp.replace(binary)
        write_json(base.parent / (base.name + ".json"), {
            "model_id": self.model_id,
            "dimension": self.dimension,
            "ids": self.ids,
        })

    @classmethod
    def load(cls, base: str | Path) -> "VectorStore":
        base = Path(base)
        sidecar = base.parent / (base.name + ".json")
        binary = base.parent / (base.name + ".f32")
        if not sidecar.exists() or not binary.exists():
            raise RetrievalNotReadyError(f"vector cache missing at {base}")
        manifest = read_json(sidecar)
        ids = manifest["ids"]
        dim = manifest["dimension"]
        raw = np.frombuffer(binary.read_bytes(), dtype="<f4")
        if dim and raw.size != len(ids) * dim:
            raise RetrievalNotReadyError(
                f"vector cache at {base} is corrupt: {raw.size} floats for "
                f"{len(ids)} ids of dimension {dim}")
        matrix = raw.reshape(len(ids), dim) if dim else np.zeros((0, 0), np.float32)
        return cls(manifest["model_id"], ids, matrix.copy())


def dense_search(query_vector: np.ndarray, store: VectorStore, k: int) -> list[RankedHit]:
    """Top-k by cosine similarity; ties broken by ascending doc_id."""
    if k <= 0:
        raise ValueError("k must be positive")
    if len(store) == 0:
        raise RetrievalNotReadyError("vector store is empty")
    qv = np.asarray(query_vector, dtype=np.float64)
    sims = [cosine(qv, store.matrix[i].astype(np.float64)) for i in range(len(store))]
    order = sorted(range(len(store)), key=lambda i: (-sims[i], store.ids[i]))[:k]
    return [RankedHit(doc_id=store.ids[i], score=sims[i], rank=pos + 1)
            for pos, i in enumerate(order)]


@dataclass
class TrainingExample:
    query: str
    positives: list[str]
    negatives: list[str]

    def to_json(self) -> dict:
        return {"query": self.query, "positives": self.positives,
                "negatives": self.negatives}


def build_training_data(cases: Iterable, article_index: Bm25Index,
                        k_neg: int = TRAIN_NEG_K) -> list[TrainingExample]:
    """One contrastive example per case: gold articles positive, the non-gold
    remainder of the BM25 top-k_neg negative."""
    examples = []
    for case in cases:
        gold = list(case.gold_articles)
        hits = article_index.search(case.facts, k=k_neg)
        negatives = [h.doc_id for h in hits if h.doc_id not in set(gold)]
        examples.append(TrainingExample(query=case.facts, positives=gold,
                                        negatives=negatives))
    return examples


@dataclass
class RecallReport:
    per_k: dict[int, float]
    n_queries: int

    def to_json(self) -> dict:
        return {"recall": {str(k): v for k, v in sorted(self.per_k.items())},
                "n_queries": self.n_queries}


def recall_at_k(results: Mapping[str, Sequence[str]],
                gold: Mapping[str, set],
                ks: Sequence[int] = (100, 200, 500, 1000)) -> RecallReport:
    missing_results = sorted(set(gold) - set(results))
    missing_gold = sorted(set(results) - set(gold))
    if missing_results or missing_gold:
        raise ValueError(
            f"query key mismatch: missing from results {missing_results}, "
            f"missing from gold {missing_gold}")
    if not results:
        raise ValueError("no queries")
    for qid, g in gold.items():
        if not g:
            raise ValueError(f"gold set empty for query {qid!r}")
    per_k = {}
    for k in ks:
        if k <= 0:
            raise ValueError("ks must be positive")
        total = 0.0
        for qid, ranking in results.items():
            g = set(gold[qid])
            total += len(set(ranking[:k]) & g) / len(g)
        per_k[k] = total / len(results)
    return RecallReport(per_k=per_k, n_queries=len(results))


class Retriever:
    """Facade bundling the case BM25 index, the article vector store, and the
    gateway into the two cascades the rest of the pipeline calls."""

    def __init__(self, store: CorpusStore, gateway: Gateway, embed_model_id: str, *,
                 case_bm25_k: int = CASE_BM25_K,
                 article_dense_k: int = ARTICLE_DENSE_K,
                 train_neg_k: int = TRAIN_NEG_K):
        self.store = store
        self.gateway = gateway
        self.embed_model_id = embed_model_id
        self.case_bm25_k = case_bm25_k
        self.article_dense_k = article_dense_k
        self.train_neg_k = train_neg_k
        self._lock = threading.Lock()
        self._case_index: Bm25Index | None = None
        self._article_index: Bm25Index | None = None
        self._article_vectors: VectorStore | None = None

    # -- index lifecycle --

    @property
    def case_index(self) -> Bm25Index:
        with self._lock:
            if self._case_index is None:
                cases = sorted(self.store.cases(), key=lambda c: c.case_id)
                self._case_index = build_index([(c.case_id, c.full_text) for c in cases])
            return self._case_index

    @property
    def article_index(self) -> Bm25Index:
        with self._lock:
            if self._article_index is None:
                articles = sorted(self.store.articles(), key=lambda a: a.article_id)
                self._article_index = build_index(
                    [(a.article_id, a.body) for a in articles])
            return self._article_index

    def build_article_vectors(self, cache_base: str | Path | None = None) -> VectorStore:
        with self._lock:
            if self._article_vectors is None:
                if cache_base is not None:
                    try:
                        cached = VectorStore.load(cache_base)
                        if cached.model_id == self.embed_model_id and \
                                cached.ids == sorted(self.store.article_ids()):
                            self._article_vectors = cached
                            return self._article_vectors
                    except RetrievalNotReadyError:
                        pass
                articles = sorted(self.store.articles(), key=lambda a: a.article_id)
                built = VectorStore.build([(a.article_id, a.body) for a in articles],
                                          self.gateway, self.embed_model_id)
                if cache_base is not None:
                    built.save(cache_base)
                self._article_vectors = built
            return self._article_vectors

    @property
    def article_vectors(self) -> VectorStore:
        with self._lock:
            ready = self._article_vectors
        if ready is None:
            raise RetrievalNotReadyError(
                "article vectors not built; call build_article_vectors first")
        return ready

    # -- cascades --

    def retrieve_precedent(self, case_facts: str) -> CorpusCase | None:
        hits = self.case_index.search(case_facts, k=self.case_bm25_k)
        if not hits:
            return None
        texts = {h.doc_id: self.store.get_case(h.doc_id).full_text for h in hits}
        top = rerank(case_facts, hits, texts, self.gateway,
                     self.embed_model_id, m=1)
        return self.store.get_case(top[0].doc_id)

    def retrieve_articles(self, case_facts: str, k: int | None = None) -> list[RankedHit]:
        store = self.article_vectors
        vectors = self.gateway.embed(EmbeddingRequest(model_id=self.embed_model_id,
                                                      texts=[case_facts]))
        return dense_search(np.asarray(vectors[0]), store,
                            k=k if k is not None else self.article_dense_k)

    def build_training_data(self, cases: Iterable) -> list[TrainingExample]:
        return build_training_data(cases, self.article_index, k_neg=self.train_neg_k)
