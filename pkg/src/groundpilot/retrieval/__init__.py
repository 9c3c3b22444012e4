"""Hybrid evidence retrieval: BM25 + dense cosine, fused by reciprocal rank."""

from __future__ import annotations

from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass
from datetime import date

from .documents import (
    MAX_PASSAGE_CHARS,
    CorpusError,
    Document,
    Passage,
    chunk_text,
    load_corpus,
    parse_timestamp,
    passages_for,
    tokenize,
    write_corpus,
)
from .embedding import Embedder, HashingEmbedder
from .fusion import RRF_K, EvidencePassage, fuse, rrf_scores
from .index import (
    BM25_B,
    BM25_K1,
    DimensionMismatch,
    IndexGeneration,
    IndexStore,
    bm25_idf,
    bm25_term,
    build_generation,
    dense_search,
    empty_index,
    refresh_index,
    sparse_search,
)
from .query import (
    TEMPORAL_PHRASES,
    ExpandedQuery,
    default_ontology_path,
    expand_query,
    load_ontology,
)
from .template import EvidenceTemplate, TemplateEntry, build_evidence_template


@dataclass(frozen=True)
class RetrievalResult:
    generation: int
    query: ExpandedQuery
    passages: tuple[EvidencePassage, ...]

    @property
    def doc_ids(self) -> tuple[str, ...]:
        return tuple(p.doc_id for p in self.passages)


def hybrid_search(
    index: IndexGeneration,
    query: str | ExpandedQuery,
    k: int = 5,
    *,
    ontology: Mapping[str, Sequence[str]] | None = None,
    reference_date: date | None = None,
    modules: Collection[str] | None = None,
    user: str | None = None,
    candidate_k: int = 20,
    rrf_k: int = RRF_K,
) -> RetrievalResult:
    """Expand, run both retrievers on one generation, and fuse."""
    if isinstance(query, str):
        query = expand_query(query, ontology, reference_date)
    sparse = sparse_search(index, query, candidate_k, modules, user)
    dense = dense_search(index, query, None, candidate_k, modules, user)
    ids = {d for d, _ in sparse} | {d for d, _ in dense}
    texts = {d: index.passage(d).text for d in ids}
    sources = {d: index.passage(d).source_module for d in ids}
    fused = fuse(sparse, dense, k, rrf_k, texts=texts, modules=sources)
    return RetrievalResult(index.generation, query, tuple(fused))


__all__ = [
    "BM25_B",
    "BM25_K1",
    "MAX_PASSAGE_CHARS",
    "RRF_K",
    "TEMPORAL_PHRASES",
    "CorpusError",
    "DimensionMismatch",
    "Document",
    "Embedder",
    "EvidencePassage",
    "EvidenceTemplate",
    "ExpandedQuery",
    "HashingEmbedder",
    "IndexGeneration",
    "IndexStore",
    "Passage",
    "RetrievalResult",
    "TemplateEntry",
    "bm25_idf",
    "bm25_term",
    "build_evidence_template",
    "build_generation",
    "chunk_text",
    "default_ontology_path",
    "dense_search",
    "empty_index",
    "expand_query",
    "fuse",
    "hybrid_search",
    "load_corpus",
    "load_ontology",
    "parse_timestamp",
    "passages_for",
    "refresh_index",
    "rrf_scores",
    "sparse_search",
    "tokenize",
    "write_corpus",
]
