"""Generational hybrid index: BM25 postings plus a dense embedding matrix.

A generation is immutable once built. ``refresh_index`` produces the next
generation; :class:`IndexStore` publishes it with a single reference swap, so
a reader that grabbed ``store.current`` keeps a consistent snapshot for the
whole query.
"""

from __future__ import annotations

import math
import threading
from collections import Counter
from collections.abc import Collection, Iterable, Mapping
from dataclasses import dataclass, field
from datetime import date
from types import MappingProxyType

import numpy as np

from .documents import CorpusError, Document, Passage, passages_for, tokenize
from .embedding import Embedder, HashingEmbedder
from .query import ExpandedQuery

BM25_K1 = 1.2
BM25_B = 0.75
# scores equal to this many decimals count as tied and fall back to id order,
# so mathematically equal scores rank the same whatever the float noise
TIE_DECIMALS = 9


class DimensionMismatch(ValueError):
    pass


def _rank_key(item: tuple[str, float]) -> tuple[float, str]:
    return -round(item[1], TIE_DECIMALS), item[0]


def bm25_idf(n_docs: int, doc_freq: int) -> float:
    # non-negative variant: ln(1 + (N - n + 0.5) / (n + 0.5))
    return math.log(1.0 + (n_docs - doc_freq + 0.5) / (doc_freq + 0.5))


def bm25_term(tf: int, doc_len: int, avgdl: float, idf: float, k1: float = BM25_K1, b: float = BM25_B) -> float:
    return idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * doc_len / avgdl))


@dataclass(frozen=True)
class IndexGeneration:
    generation: int
    documents: Mapping[str, Document]
    passages: tuple[Passage, ...]
    postings: Mapping[str, tuple[tuple[int, int], ...]]
    lengths: tuple[int, ...]
    avgdl: float
    vectors: np.ndarray = field(repr=False, compare=False)
    embedder: Embedder = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.passages)

    @property
    def passage_ids(self) -> list[str]:
        return [p.passage_id for p in self.passages]

    def passage(self, passage_id: str) -> Passage:
        return self._by_id[passage_id]

    @property
    def _by_id(self) -> dict[str, Passage]:
        cache = self.__dict__.get("_by_id_cache")
        if cache is None:
            cache = {p.passage_id: p for p in self.passages}
            object.__setattr__(self, "_by_id_cache", cache)
        return cache

    def _eligible(
        self, idx: int, window: tuple[date, date] | None, modules: Collection[str] | None, user: str | None = None
    ) -> bool:
        p = self.passages[idx]
        if modules is not None and p.source_module not in modules:
            return False
        if p.owner is not None and p.owner != user:
            return False
        if window is not None:
            day = p.published_at.date()
            if day < window[0] or day > window[1]:
                return False
        return True


def build_generation(
    documents: Iterable[Document], embedder: Embedder | None = None, generation: int = 0
) -> IndexGeneration:
    embedder = embedder or HashingEmbedder()
    docs: dict[str, Document] = {}
    for doc in documents:
        if doc.doc_id in docs:
            raise CorpusError(f"duplicate doc_id {doc.doc_id!r}")
        docs[doc.doc_id] = doc

    passages: list[Passage] = []
    seen: set[str] = set()
    for doc_id in sorted(docs):
        for p in passages_for(docs[doc_id]):
            if p.passage_id in seen:
                raise CorpusError(f"passage id {p.passage_id!r} collides with another document")
            seen.add(p.passage_id)
            passages.append(p)

    postings: dict[str, list[tuple[int, int]]] = {}
    lengths = []
    for idx, p in enumerate(passages):
        tokens = tokenize(p.text)
        lengths.append(len(tokens))
        for term, tf in Counter(tokens).items():
            postings.setdefault(term, []).append((idx, tf))
    avgdl = (sum(lengths) / len(lengths)) if lengths else 0.0

    if passages:
        vectors = np.vstack([embedder.embed(p.text) for p in passages])
    else:
        vectors = np.zeros((0, embedder.dimension))
    vectors.setflags(write=False)

    return IndexGeneration(
        generation=generation,
        documents=MappingProxyType(docs),
        passages=tuple(passages),
        postings=MappingProxyType({t: tuple(v) for t, v in postings.items()}),
        lengths=tuple(lengths),
        avgdl=avgdl,
        vectors=vectors,
        embedder=embedder,
    )


def empty_index(embedder: Embedder | None = None) -> IndexGeneration:
    return build_generation([], embedder, generation=0)


def refresh_index(index: IndexGeneration, changed: Iterable[Document]) -> IndexGeneration:
    """Build the next generation with ``changed`` documents added or replaced."""
    changed = list(changed)
    ids = [d.doc_id for d in changed]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise CorpusError(f"duplicate doc_id within refresh batch: {dupes}")
    merged = dict(index.documents)
    merged.update((d.doc_id, d) for d in changed)
    return build_generation(merged.values(), index.embedder, generation=index.generation + 1)


def sparse_search(
    index: IndexGeneration,
    query: ExpandedQuery,
    k: int = 10,
    modules: Collection[str] | None = None,
    user: str | None = None,
) -> list[tuple[str, float]]:
    """BM25 over the query's distinct keyword and expansion terms.

    Only passages sharing at least one term are returned. Corpus statistics
    (N, document frequency, average length) come from the whole generation;
    the module scope, time window and owner filter candidates afterwards.
    Owned passages are visible only to ``user``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n_docs = len(index.passages)
    if n_docs == 0:
        return []
    scores: dict[int, float] = {}
    for term in query.search_terms():
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = bm25_idf(n_docs, len(plist))
        for idx, tf in plist:
            scores[idx] = scores.get(idx, 0.0) + bm25_term(tf, index.lengths[idx], index.avgdl, idf)
    ranked = [
        (index.passages[idx].passage_id, score)
        for idx, score in scores.items()
        if index._eligible(idx, query.time_window, modules, user)
    ]
    ranked.sort(key=_rank_key)
    return ranked[:k]


def dense_search(
    index: IndexGeneration,
    query: ExpandedQuery,
    embedder: Embedder | None = None,
    k: int = 10,
    modules: Collection[str] | None = None,
    user: str | None = None,
) -> list[tuple[str, float]]:
    """Exact top-k by cosine similarity over eligible passages."""
    if k < 1:
        raise ValueError("k must be >= 1")
    embedder = embedder or index.embedder
    q = np.asarray(embedder.embed(query.embedding_text()), dtype=float)
    if q.shape != (index.vectors.shape[1],):
        raise DimensionMismatch(f"query vector has shape {q.shape}, index stores dimension {index.vectors.shape[1]}")
    eligible = [i for i in range(len(index.passages)) if index._eligible(i, query.time_window, modules, user)]
    if not eligible:
        return []
    mat = index.vectors[eligible]
    norms = np.linalg.norm(mat, axis=1) * np.linalg.norm(q)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(norms > 0, (mat @ q) / norms, 0.0)
    ranked = [(index.passages[i].passage_id, float(c)) for i, c in zip(eligible, cos)]
    ranked.sort(key=_rank_key)
    return ranked[:k]


class IndexStore:
    """Holder for the published generation. Writers serialize; readers never block."""

    def __init__(self, initial: IndexGeneration | None = None) -> None:
        self._current = initial if initial is not None else empty_index()
        self._write_lock = threading.Lock()

    @property
    def current(self) -> IndexGeneration:
        return self._current

    def refresh(self, changed: Iterable[Document]) -> IndexGeneration:
        with self._write_lock:
            nxt = refresh_index(self._current, changed)
            self._current = nxt
            return nxt
