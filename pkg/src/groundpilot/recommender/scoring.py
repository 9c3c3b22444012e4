"""Rule layer and sequential (next-type) layer."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import datetime
from typing import Protocol

import numpy as np

from .model import MANDATORY_TYPES, N_TYPES, TYPE_INDEX, InsightCard, UserProfile


@dataclass(frozen=True)
class RuleParams:
    w_own: float = 2.0
    w_watch: float = 1.5
    w_base: float = 1.0
    read_multiplier: float = 0.2
    decay_per_hour: float = math.log(2) / 24  # 24h half-life

    def __post_init__(self) -> None:
        for name in ("w_own", "w_watch", "w_base", "read_multiplier", "decay_per_hour"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def age_hours(card: InsightCard, now: datetime) -> float:
    # clock skew: cards "from the future" count as brand new
    return max(0.0, (now - card.created_at).total_seconds() / 3600.0)


def rule_score(card: InsightCard, profile: UserProfile, now: datetime, params: RuleParams = RuleParams()) -> float:
    tickers = set(card.tickers)
    if tickers & profile.owned_tickers:
        weight = params.w_own
    elif tickers & profile.watched_tickers:
        weight = params.w_watch
    else:
        weight = params.w_base
    if card.card_id in profile.read_cards and card.insight_type not in MANDATORY_TYPES:
        weight *= params.read_multiplier
    return weight * math.exp(-params.decay_per_hour * age_hours(card, now))


class SequentialPredictor(Protocol):
    def predict(self, history: Sequence[str]) -> np.ndarray: ...


def sequential_predict(history: Sequence[str], smoothing: float = 1.0) -> np.ndarray:
    """Order-1 Markov next-type distribution with additive smoothing.

    Transition counts come from ``history`` itself; the row used is the one
    for the last type read. Empty history (or a last type never followed by
    anything) gives the uniform distribution.
    """
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    try:
        idx = [TYPE_INDEX[t] for t in history]
    except KeyError as exc:
        raise ValueError(f"unknown insight type {exc.args[0]!r}") from None
    row = np.zeros(N_TYPES)
    if idx:
        last = idx[-1]
        for a, b in zip(idx, idx[1:]):
            if a == last:
                row[b] += 1.0
    return (row + smoothing) / (row.sum() + N_TYPES * smoothing)


class MarkovPredictor:
    def __init__(self, smoothing: float = 1.0) -> None:
        self.smoothing = smoothing

    def predict(self, history: Sequence[str]) -> np.ndarray:
        return sequential_predict(history, self.smoothing)
