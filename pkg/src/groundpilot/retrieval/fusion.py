from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

RRF_K = 60


@dataclass(frozen=True)
class EvidencePassage:
    doc_id: str
    passage_text: str
    sparse_score: float | None
    dense_score: float | None
    fused_rank: int
    fused_score: float
    source_module: str = ""

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_module": self.source_module,
            "sparse_score": self.sparse_score,
            "dense_score": self.dense_score,
            "fused_rank": self.fused_rank,
            "fused_score": self.fused_score,
        }


def rrf_scores(ranked_lists: Sequence[Sequence[tuple[str, float]]], rrf_k: int = RRF_K) -> dict[str, float]:
    scores: dict[str, float] = {}
    for ranked in ranked_lists:
        for rank, (doc_id, _) in enumerate(ranked, 1):
            scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (rrf_k + rank)
    return scores


def fuse(
    sparse: Sequence[tuple[str, float]],
    dense: Sequence[tuple[str, float]],
    k: int,
    rrf_k: int = RRF_K,
    texts: Mapping[str, str] | None = None,
    modules: Mapping[str, str] | None = None,
) -> list[EvidencePassage]:
    """Reciprocal-rank fusion of a sparse and a dense ranking.

    Each input list must be free of duplicate ids. Output is ordered by
    descending fused score, ties broken by ascending id, and truncated to
    ``k`` entries ranked 1..k.
    """
    for name, ranked in (("sparse", sparse), ("dense", dense)):
        ids = [d for d, _ in ranked]
        if len(set(ids)) != len(ids):
            raise ValueError(f"{name} list contains duplicate ids")
    sparse_by_id = dict(sparse)
    dense_by_id = dict(dense)
    scores = rrf_scores([sparse, dense], rrf_k)
    order = sorted(scores, key=lambda d: (-scores[d], d))[: max(k, 0)]
    texts = texts or {}
    modules = modules or {}
    return [
        EvidencePassage(
            doc_id=doc_id,
            passage_text=texts.get(doc_id, ""),
            sparse_score=sparse_by_id.get(doc_id),
            dense_score=dense_by_id.get(doc_id),
            fused_rank=rank,
            fused_score=scores[doc_id],
            source_module=modules.get(doc_id, ""),
        )
        for rank, doc_id in enumerate(order, 1)
    ]
