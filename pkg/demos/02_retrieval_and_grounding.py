"""Hybrid retrieval and citation grounding on the bundled demo corpus.

Runs one query through BM25, the hashing embedder and reciprocal rank fusion,
then builds a cited answer from the evidence template and validates it.

    python3 demos/02_retrieval_and_grounding.py
"""

from __future__ import annotations

from datetime import date
from importlib import resources

from groundpilot.grounding import strip_tokens, validate
from groundpilot.registry import default_manifest_path, load_manifest
from groundpilot.retrieval import (
    HashingEmbedder,
    build_evidence_template,
    build_generation,
    dense_search,
    expand_query,
    fuse,
    load_corpus,
    sparse_search,
)
from groundpilot.router import compose_grounded_text

QUERY = "which semiconductor names moved and why"


def main() -> None:
    manifest = load_manifest(default_manifest_path())
    corpus = resources.files("groundpilot") / "data" / "demo" / "corpus.jsonl"
    docs = load_corpus(str(corpus), manifest.modules)
    index = build_generation(docs, HashingEmbedder())
    print(f"indexed {len(docs)} documents")

    q = expand_query(QUERY, {"semiconductor": ["chip", "memory"]}, date(2025, 1, 6))
    print(f"keywords={q.keywords} expansion={q.expansion_terms}")

    sparse = sparse_search(index, q, 5)
    dense = dense_search(index, q, None, 5)
    texts = {d: index.passage(d).text for d, _ in sparse + dense}
    modules = {d: index.passage(d).source_module for d, _ in sparse + dense}
    fused = fuse(sparse, dense, 4, texts=texts, modules=modules)
    print("\nsparse:", [(d, round(s, 3)) for d, s in sparse])
    print("dense: ", [(d, round(s, 3)) for d, s in dense])
    print("fused: ", [(p.doc_id, round(p.fused_score, 5)) for p in fused])

    template = build_evidence_template(fused, 1200)
    text = compose_grounded_text(template)
    report = validate(text, [p.doc_id for p in fused])
    print(f"\ngroundedness={report.groundedness:.2f} passed={report.passed}")
    print(strip_tokens(text))

    tampered = text + " Shares will double next year."
    print(f"\nwith an uncited claim appended: groundedness={validate(tampered, [p.doc_id for p in fused]).groundedness:.2f}")


if __name__ == "__main__":
    main()
