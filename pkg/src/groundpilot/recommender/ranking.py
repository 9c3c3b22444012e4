"""Three-layer feed ranking under a trust budget.

1. baseline  = w_rule * rule_score + w_seq * P(next type), descending;
               ties by newer card, then card_id.
2. bandit    = LinUCB score of each card under its insight-type arm.
3. final     = left-to-right slot fill: each slot takes the best-UCB card
               among those still unplaced whose baseline position is within
               ``budget`` of the slot, except that a card reaching the end of
               its window is placed immediately.

Because every card's slot is bounded, the sum of UCB scores is the same for
every feasible order; the sweep instead yields the feasible order whose UCB
sequence is lexicographically best (highest-UCB card as early as the budget
allows, then the next, ...).
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

from .bandit import BanditArmState
from .model import TYPE_INDEX, InsightCard, UserProfile
from .scoring import MarkovPredictor, RuleParams, SequentialPredictor, age_hours, rule_score

CONTEXT_FEATURES = ("rule_score", "p_seq", "recency", "owned", "watched")
CONTEXT_DIM = len(CONTEXT_FEATURES)


@dataclass(frozen=True)
class RankWeights:
    w_rule: float = 1.0
    w_seq: float = 0.5


@dataclass(frozen=True)
class RankingTrace:
    baseline_order: tuple[str, ...]
    final_order: tuple[str, ...]
    displacements: Mapping[str, int]
    budget: int
    baseline_scores: Mapping[str, float] = field(default_factory=dict)
    ucb_scores: Mapping[str, float] = field(default_factory=dict)
    contexts: Mapping[str, tuple[float, ...]] = field(default_factory=dict)

    @property
    def max_displacement(self) -> int:
        return max((abs(v) for v in self.displacements.values()), default=0)

    def to_dict(self) -> dict:
        return {
            "baseline_order": list(self.baseline_order),
            "final_order": list(self.final_order),
            "displacements": dict(self.displacements),
            "budget": self.budget,
            "baseline_scores": dict(self.baseline_scores),
            "ucb_scores": dict(self.ucb_scores),
        }


def budgeted_order(baseline: Sequence[str], priority: Mapping[str, int], budget: int) -> list[str]:
    """Greedy slot fill. ``priority`` ranks cards, 0 = most preferred by the bandit."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    n = len(baseline)
    placed = [False] * n
    out: list[str] = []
    for slot in range(n):
        due = slot - budget
        if due >= 0 and not placed[due]:
            pick = due
        else:
            lo, hi = max(0, slot - budget), min(n, slot + budget + 1)
            pick = min((i for i in range(lo, hi) if not placed[i]), key=lambda i: priority[baseline[i]])
        placed[pick] = True
        out.append(baseline[pick])
    return out


def standardize(matrix: np.ndarray) -> np.ndarray:
    """Column z-scores; constant columns become 0."""
    if matrix.shape[0] == 0:
        return matrix
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    # roundoff leaves a tiny std on constant columns; treat those as constant
    varies = std > 1e-12 * (1.0 + np.abs(mean))
    safe = np.where(varies, std, 1.0)
    return np.where(varies, (matrix - mean) / safe, 0.0)


def card_contexts(
    cards: Sequence[InsightCard], profile: UserProfile, rule: Sequence[float], p_seq: Sequence[float], now: datetime
) -> np.ndarray:
    raw = np.array(
        [
            [
                r,
                p,
                1.0 / (1.0 + age_hours(c, now)),
                1.0 if set(c.tickers) & profile.owned_tickers else 0.0,
                1.0 if set(c.tickers) & profile.watched_tickers else 0.0,
            ]
            for c, r, p in zip(cards, rule, p_seq)
        ],
        dtype=float,
    ).reshape(len(cards), CONTEXT_DIM)
    return standardize(raw)


def rank_feed(
    cards: Sequence[InsightCard],
    profile: UserProfile,
    arms: Mapping[str, BanditArmState],
    now: datetime,
    *,
    budget: int = 2,
    weights: RankWeights = RankWeights(),
    alpha: float = 0.5,
    rule_params: RuleParams = RuleParams(),
    predictor: SequentialPredictor | None = None,
) -> RankingTrace:
    if budget < 0:
        raise ValueError("budget must be >= 0")
    for c in cards:
        if c.user_id != profile.user_id:
            raise ValueError(f"card {c.card_id!r} belongs to {c.user_id!r}, not {profile.user_id!r}")
    if not cards:
        return RankingTrace((), (), {}, budget)
    predictor = predictor or MarkovPredictor()

    rule = [rule_score(c, profile, now, rule_params) for c in cards]
    dist = predictor.predict(profile.reading_sequence())
    p_seq = [float(dist[TYPE_INDEX[c.insight_type]]) for c in cards]
    base = {c.card_id: weights.w_rule * r + weights.w_seq * p for c, r, p in zip(cards, rule, p_seq)}
    baseline = [
        c.card_id
        for c in sorted(cards, key=lambda c: (-base[c.card_id], -c.created_at.timestamp(), c.card_id))
    ]
    position = {cid: i for i, cid in enumerate(baseline)}

    ctx = card_contexts(cards, profile, rule, p_seq, now)
    ucb: dict[str, float] = {}
    by_type: dict[str, list[int]] = {}
    for i, c in enumerate(cards):
        by_type.setdefault(c.insight_type, []).append(i)
    for arm_id, rows in by_type.items():
        state = arms.get(arm_id) or BanditArmState.fresh(arm_id, CONTEXT_DIM)
        X = ctx[rows]
        theta = np.linalg.solve(state.A, state.b)
        widths = np.einsum("ij,ji->i", X, np.linalg.solve(state.A, X.T))
        vals = X @ theta + alpha * np.sqrt(np.maximum(widths, 0.0))
        for i, v in zip(rows, vals):
            ucb[cards[i].card_id] = float(v)

    preferred = sorted(baseline, key=lambda cid: (-ucb[cid], position[cid]))
    priority = {cid: i for i, cid in enumerate(preferred)}
    final = budgeted_order(baseline, priority, budget)
    return RankingTrace(
        baseline_order=tuple(baseline),
        final_order=tuple(final),
        displacements={cid: i - position[cid] for i, cid in enumerate(final)},
        budget=budget,
        baseline_scores=base,
        ucb_scores=ucb,
        contexts={c.card_id: tuple(float(v) for v in ctx[i]) for i, c in enumerate(cards)},
    )
