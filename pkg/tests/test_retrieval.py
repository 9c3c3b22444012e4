import math
import threading
from collections import Counter
from datetime import date, datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundpilot.grounding import REF_TOKEN
from groundpilot.retrieval import (
    MAX_PASSAGE_CHARS,
    CorpusError,
    DimensionMismatch,
    Document,
    EvidencePassage,
    ExpandedQuery,
    HashingEmbedder,
    IndexStore,
    build_evidence_template,
    build_generation,
    chunk_text,
    dense_search,
    expand_query,
    fuse,
    hybrid_search,
    load_corpus,
    refresh_index,
    sparse_search,
    tokenize,
    write_corpus,
)

T0 = datetime(2025, 1, 6, 9, tzinfo=timezone.utc)


def doc(doc_id, text, module="m", when=T0, **meta):
    return Document(doc_id, module, text, when, meta)


CORPUS = [
    doc("a", "Hanbit Semiconductor shares rose on memory chip demand."),
    doc("b", "Seoul Battery fell as lithium prices slipped. Battery makers lagged."),
    doc("c", "The KOSPI index closed higher led by chip makers and banks."),
    doc("d", "Mirae Bank Holdings raised its dividend per share."),
    doc("e", "Chip chip chip: semiconductor exports rose again in December."),
    doc("f", "Won strengthened against the dollar while oil was flat."),
]


def bm25_oracle(texts, terms, k1=1.2, b=0.75):
    """Textbook BM25 straight from token lists."""
    toks = [tokenize(t) for t in texts]
    n = len(toks)
    avgdl = sum(map(len, toks)) / n
    out = []
    for t in toks:
        tf = Counter(t)
        s = 0.0
        for q in set(terms):
            df = sum(1 for u in toks if q in u)
            if df == 0 or tf[q] == 0:
                continue
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * tf[q] * (k1 + 1) / (tf[q] + k1 * (1 - b + b * len(t) / avgdl))
        out.append(s)
    return out


def test_sparse_matches_bm25_oracle():
    index = build_generation(CORPUS)
    for query in ("chip demand", "battery", "bank dividend share", "semiconductor rose chip", "nothing here"):
        q = ExpandedQuery.plain(query)
        got = dict(sparse_search(index, q, k=len(CORPUS)))
        want = bm25_oracle([d.text for d in CORPUS], q.keywords)
        expected = {d.doc_id: s for d, s in zip(CORPUS, want) if s > 0}
        assert got.keys() == expected.keys()
        for k, v in expected.items():
            assert got[k] == pytest.approx(v, rel=1e-12)


def test_repeated_query_terms_count_once():
    index = build_generation(CORPUS)
    once = sparse_search(index, ExpandedQuery.plain("chip"), 10)
    twice = sparse_search(index, ExpandedQuery.plain("chip chip chip"), 10)
    assert once == twice


def test_idf_never_negative():
    docs = [doc(f"x{i}", "common word here") for i in range(5)]
    index = build_generation(docs)
    hits = sparse_search(index, ExpandedQuery.plain("common"), 10)
    assert len(hits) == 5 and all(s > 0 for _, s in hits)


def test_dense_matches_bruteforce_cosine():
    emb = HashingEmbedder()
    index = build_generation(CORPUS, emb)
    q = ExpandedQuery.plain("chip makers semiconductor")
    got = dense_search(index, q, k=len(CORPUS))
    qv = emb.embed(q.embedding_text())
    want = []
    for d in CORPUS:
        v = emb.embed(d.text)
        want.append((d.doc_id, float(np.dot(v, qv) / (np.linalg.norm(v) * np.linalg.norm(qv)))))
    want.sort(key=lambda x: (-round(x[1], 9), x[0]))
    assert [d for d, _ in got] == [d for d, _ in want]
    for (_, a), (_, b) in zip(got, want):
        assert a == pytest.approx(b, abs=1e-12)


def test_dense_dimension_mismatch():
    index = build_generation(CORPUS, HashingEmbedder(64))
    with pytest.raises(DimensionMismatch):
        dense_search(index, ExpandedQuery.plain("chip"), HashingEmbedder(32))


def test_embedder_unit_norm_and_deterministic():
    emb = HashingEmbedder()
    for text in ("", "!!!", "chip makers", "반도체 수출"):
        v = emb.embed(text)
        assert v.shape == (64,)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        assert np.array_equal(v, HashingEmbedder().embed(text))


def test_fusion_worked_example():
    # id present at rank 1 in both lists scores 2/61
    fused = fuse([("x", 3.0), ("y", 1.0)], [("x", 0.9), ("z", 0.5)], k=3)
    assert fused[0].doc_id == "x" and fused[0].fused_score == pytest.approx(2 / 61)
    assert [p.doc_id for p in fused] == ["x", "y", "z"]
    assert fused[1].fused_score == fused[2].fused_score == pytest.approx(1 / 62)
    assert fused[1].dense_score is None and fused[2].sparse_score is None
    assert [p.fused_rank for p in fused] == [1, 2, 3]


def test_fusion_single_list_degenerates_to_that_order():
    ranked = [("d", 5.0), ("a", 4.0), ("c", 1.0)]
    assert [p.doc_id for p in fuse(ranked, [], k=3)] == ["d", "a", "c"]
    assert [p.doc_id for p in fuse([], ranked, k=2)] == ["d", "a"]


def test_fusion_rejects_duplicates():
    with pytest.raises(ValueError):
        fuse([("a", 1.0), ("a", 0.5)], [], k=1)


id_lists = st.lists(st.sampled_from("abcdefghij"), unique=True, max_size=10)


@settings(max_examples=300, deadline=None)
@given(id_lists, id_lists, st.integers(0, 12))
def test_fusion_property(sparse_ids, dense_ids, k):
    sparse = [(d, float(-i)) for i, d in enumerate(sparse_ids)]
    dense = [(d, float(-i)) for i, d in enumerate(dense_ids)]
    fused = fuse(sparse, dense, k)
    oracle = {}
    for ranked in (sparse_ids, dense_ids):
        for r, d in enumerate(ranked, 1):
            oracle[d] = oracle.get(d, 0.0) + 1 / (60 + r)
    order = sorted(oracle, key=lambda d: (-oracle[d], d))[:k]
    assert [p.doc_id for p in fused] == order
    scores = [p.fused_score for p in fused]
    assert scores == sorted(scores, reverse=True)
    for p in fused:
        assert p.fused_score == pytest.approx(oracle[p.doc_id])


@settings(max_examples=100, deadline=None)
@given(id_lists, st.sampled_from("abcdefghij"))
def test_fusion_monotone_in_rank(ids, target):
    # moving an id up one list never lowers its fused score
    if target not in ids or ids.index(target) == 0:
        return
    i = ids.index(target)
    better = ids[:]
    better[i - 1], better[i] = better[i], better[i - 1]
    s0 = {p.doc_id: p.fused_score for p in fuse([(d, 0.0) for d in ids], [], len(ids))}
    s1 = {p.doc_id: p.fused_score for p in fuse([(d, 0.0) for d in better], [], len(ids))}
    assert s1[target] > s0[target]


def test_hybrid_scopes_modules_and_owner():
    docs = [
        doc("pub", "portfolio holdings summary for the market", module="pub_mod"),
        doc("mine", "portfolio holdings of user one", module="acct", owner="u1"),
        doc("theirs", "portfolio holdings of user two", module="acct", owner="u2"),
    ]
    index = build_generation(docs)
    ids = hybrid_search(index, "portfolio holdings", 5, user="u1").doc_ids
    assert set(ids) == {"pub", "mine"}
    assert "theirs" not in hybrid_search(index, "portfolio", 5, user=None).doc_ids
    assert "mine" not in hybrid_search(index, "portfolio", 5).doc_ids
    assert hybrid_search(index, "portfolio", 5, modules={"acct"}, user="u2").doc_ids == ("theirs",)


def test_query_expansion_and_time_window():
    q = expand_query("How did chips do last week", {"chips": ["semiconductor", "Memory"]}, date(2025, 1, 8))
    assert q.time_window == (date(2024, 12, 30), date(2025, 1, 5))
    assert q.expansion_terms == ("semiconductor", "memory")
    assert "last" not in q.keywords and "week" not in q.keywords
    assert expand_query("today", None, None).time_window is None


@pytest.mark.parametrize(
    "phrase, ref, window",
    [
        ("today", date(2025, 1, 8), (date(2025, 1, 8), date(2025, 1, 8))),
        ("어제", date(2025, 1, 1), (date(2024, 12, 31), date(2024, 12, 31))),
        ("this week", date(2025, 1, 8), (date(2025, 1, 6), date(2025, 1, 8))),
        ("last month", date(2025, 3, 15), (date(2025, 2, 1), date(2025, 2, 28))),
        ("last month", date(2025, 1, 15), (date(2024, 12, 1), date(2024, 12, 31))),
        ("last quarter", date(2025, 2, 10), (date(2024, 10, 1), date(2024, 12, 31))),
        ("this quarter", date(2025, 5, 20), (date(2025, 4, 1), date(2025, 5, 20))),
        ("ytd", date(2025, 5, 20), (date(2025, 1, 1), date(2025, 5, 20))),
        ("작년", date(2025, 5, 20), (date(2024, 1, 1), date(2024, 12, 31))),
    ],
)
def test_temporal_phrases(phrase, ref, window):
    assert expand_query(f"flows {phrase}", None, ref).time_window == window


def test_time_window_filters_candidates():
    docs = [
        doc("old", "index closed higher", when=datetime(2024, 12, 2, tzinfo=timezone.utc)),
        doc("new", "index closed higher", when=T0),
    ]
    index = build_generation(docs)
    assert hybrid_search(index, "index today", 5, reference_date=T0.date()).doc_ids == ("new",)


def test_chunking_respects_limit_and_ids():
    text = " ".join(f"Sentence number {i} talks about chips." for i in range(80))
    chunks = chunk_text(text)
    assert len(chunks) > 1 and all(len(c) <= MAX_PASSAGE_CHARS for c in chunks)
    assert chunk_text("x" * 2500, 1000) == ["x" * 1000] * 2 + ["x" * 500]
    index = build_generation([doc("long", text)])
    assert index.passage_ids[:2] == ["long.p1", "long.p2"]
    assert all(p.doc_id == "long" for p in index.passages)


def test_template_budget_and_format():
    passages = [
        EvidencePassage("a", "First fact. Second fact.", 1.0, 0.5, 1, 0.03),
        EvidencePassage("b", "Other [ref:zzz] fact.", 1.0, None, 2, 0.02),
    ]
    full = build_evidence_template(passages, 1000)
    assert full.render() == "[ref:a] First fact. Second fact.\n[ref:b] Other fact."
    tight = build_evidence_template(passages, len("[ref:a] First fact."))
    assert tight.render() == "[ref:a] First fact." and tight.doc_ids == ("a",)
    tiny = build_evidence_template(passages, 3)
    assert tiny.doc_ids == ("a",)
    with pytest.raises(ValueError):
        build_evidence_template([], 100)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.text(alphabet="abc .[]ref:", min_size=0, max_size=80), min_size=1, max_size=5),
    st.integers(20, 400),
)
def test_template_fits_budget(texts, budget):
    passages = [EvidencePassage(f"p{i}", t, None, None, i + 1, 0.0) for i, t in enumerate(texts)]
    tpl = build_evidence_template(passages, budget)
    rendered = tpl.render()
    assert len(rendered) <= budget or len(tpl.entries) == 1
    assert REF_TOKEN.findall(rendered) == list(tpl.doc_ids)


def test_refresh_generations_and_swap():
    store = IndexStore(build_generation(CORPUS[:3]))
    before = store.current
    nxt = store.refresh([doc("a", "Replaced text about dividends."), CORPUS[3]])
    assert nxt.generation == before.generation + 1 and store.current is nxt
    assert len(before) == 3 and len(nxt) == 4
    assert before.documents["a"].text != nxt.documents["a"].text
    with pytest.raises(CorpusError):
        refresh_index(nxt, [CORPUS[0], CORPUS[0]])
    with pytest.raises(TypeError):
        nxt.documents["z"] = CORPUS[0]


def test_refresh_equals_fresh_build():
    changed = [doc("a", "New words entirely."), doc("g", "Added document on flows.")]
    refreshed = refresh_index(build_generation(CORPUS), changed)
    fresh = build_generation(changed + CORPUS[1:])
    q = ExpandedQuery.plain("words flows chip")
    assert sparse_search(refreshed, q, 10) == sparse_search(fresh, q, 10)
    assert np.array_equal(refreshed.vectors, fresh.vectors)


def test_readers_see_consistent_generations():
    store = IndexStore(build_generation(CORPUS))
    seen, stop = [], threading.Event()

    def reader():
        while not stop.is_set():
            g = store.current
            seen.append((g.generation, len(g), g.vectors.shape[0]))

    t = threading.Thread(target=reader)
    t.start()
    for i in range(20):
        store.refresh([doc(f"n{i}", f"note {i}")])
    stop.set()
    t.join()
    assert all(n == rows for _, n, rows in seen)
    assert store.current.generation == 20


def test_corpus_roundtrip_and_errors(tmp_path):
    path = tmp_path / "c.jsonl"
    write_corpus(path, CORPUS)
    assert load_corpus(path) == CORPUS
    with pytest.raises(CorpusError):
        load_corpus(path, known_modules={"other"})
    with pytest.raises(CorpusError):
        Document("bad id", "m", "t", T0)
    with pytest.raises(CorpusError):
        build_generation([CORPUS[0], CORPUS[0]])
