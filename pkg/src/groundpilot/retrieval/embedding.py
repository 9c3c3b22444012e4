from __future__ import annotations

import hashlib
from typing import Protocol

import numpy as np

from .documents import tokenize


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Signed feature hashing of token n-grams, L2-normalized.

    Deterministic across processes (blake2b, not ``hash()``). Text with no
    usable features maps to the vector of a fixed sentinel feature so the
    output is always unit-norm.
    """

    _SENTINEL = "\x00<empty>"

    def __init__(self, dimension: int = 64, ngram_range: tuple[int, int] = (1, 2)) -> None:
        if dimension < 1:
            raise ValueError("dimension must be positive")
        lo, hi = ngram_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad ngram_range {ngram_range}")
        self.dimension = dimension
        self.ngram_range = ngram_range

    def _features(self, text: str) -> list[str]:
        tokens = tokenize(text)
        lo, hi = self.ngram_range
        feats = []
        for n in range(lo, hi + 1):
            feats.extend(" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1))
        return feats

    def _accumulate(self, vec: np.ndarray, feature: str) -> None:
        h = int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")
        vec[h % self.dimension] += 1.0 if (h >> 63) & 1 else -1.0

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension)
        for feature in self._features(text):
            self._accumulate(vec, feature)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[:] = 0.0
            self._accumulate(vec, self._SENTINEL)
            norm = 1.0
        return vec / norm

    def embed_many(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dimension))
        return np.vstack([self.embed(t) for t in texts])
