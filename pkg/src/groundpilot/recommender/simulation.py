"""Seeded offline simulations for the feed and the bandit layer."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np

from .bandit import BanditArmState, bandit_select, bandit_update
from .model import TYPE_IDS, EventType, InsightCard, Interaction, UserProfile
from .ranking import rank_feed
from .scoring import RuleParams

_T0 = datetime(2025, 1, 6, 8, 0, tzinfo=timezone.utc)


@dataclass(frozen=True)
class RepetitionStats:
    impressions: int
    reshows: int

    @property
    def reshow_fraction(self) -> float:
        return self.reshows / self.impressions if self.impressions else 0.0


def simulate_repetition(
    read_multiplier: float,
    *,
    n_users: int = 100,
    sessions_per_user: int = 10,
    session_gap_hours: float = 6.0,
    new_cards_per_day: int = 8,
    card_lifetime_days: int = 3,
    feed_size: int = 5,
    click_prob: float = 0.5,
    seed: int = 2025,
) -> RepetitionStats:
    """Count how often the top of the feed re-shows cards the user already read.

    Each user gets a fresh batch of cards every day and opens the feed every
    ``session_gap_hours``. Ranking is the baseline (rule + sequential) order,
    i.e. ``rank_feed`` with budget 0. The random streams depend only on
    ``seed``, so two runs that differ only in ``read_multiplier`` see
    identical card pools and identical click coins.
    """
    params = RuleParams(read_multiplier=read_multiplier)
    rng = np.random.default_rng(seed)
    tickers = [f"T{i:03d}" for i in range(30)]
    impressions = reshows = 0
    for u in range(n_users):
        owned = frozenset(rng.choice(tickers, size=3, replace=False))
        watched = frozenset(rng.choice([t for t in tickers if t not in owned], size=3, replace=False))
        profile = UserProfile(f"u{u}", owned, watched)
        pool: list[InsightCard] = []
        # pre-draw everything random for this user so the stream is policy independent
        draws_types = rng.choice(len(TYPE_IDS), size=(sessions_per_user, new_cards_per_day))
        draws_tickers = rng.choice(len(tickers), size=(sessions_per_user, new_cards_per_day))
        coins = rng.random((sessions_per_user, feed_size))
        last_day = -1
        for s in range(sessions_per_user):
            now = _T0 + timedelta(hours=s * session_gap_hours)
            day = int(s * session_gap_hours // 24)
            if day != last_day:
                for j in range(new_cards_per_day):
                    pool.append(
                        InsightCard(
                            card_id=f"u{u}.d{day}.c{j}",
                            user_id=profile.user_id,
                            insight_type=TYPE_IDS[draws_types[day % sessions_per_user, j]],
                            tickers=(tickers[draws_tickers[day % sessions_per_user, j]],),
                            created_at=_T0 + timedelta(days=day),
                            body="",
                        )
                    )
                last_day = day
            pool = [c for c in pool if (now - c.created_at) < timedelta(days=card_lifetime_days)]
            trace = rank_feed(pool, profile, {}, now, budget=0, rule_params=params)
            shown = trace.baseline_order[:feed_size]
            by_id = {c.card_id: c for c in pool}
            for k, card_id in enumerate(shown):
                impressions += 1
                if card_id in profile.read_cards:
                    reshows += 1
                elif coins[s, k] < click_prob:
                    profile.record(Interaction(by_id[card_id].insight_type, EventType.CLICK, now, card_id))
    return RepetitionStats(impressions, reshows)


@dataclass(frozen=True)
class LinearEnvironment:
    """Bernoulli rewards with mean ``theta_a . x``, always inside [0.1, 0.9].

    Contexts are ``x = [1, z]`` with ``z`` uniform on the unit sphere in
    ``d - 1`` dimensions; ``theta_a = [0.5, 0.4 u_a]`` with unit ``u_a``.
    """

    thetas: np.ndarray

    @classmethod
    def make(cls, n_arms: int = 5, d: int = 5, seed: int = 0) -> LinearEnvironment:
        rng = np.random.default_rng(seed)
        u = rng.normal(size=(n_arms, d - 1))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        return cls(np.hstack([np.full((n_arms, 1), 0.5), 0.4 * u]))

    @property
    def n_arms(self) -> int:
        return self.thetas.shape[0]

    @property
    def d(self) -> int:
        return self.thetas.shape[1]

    def context(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.normal(size=self.d - 1)
        return np.concatenate([[1.0], z / np.linalg.norm(z)])

    def means(self, x: np.ndarray) -> np.ndarray:
        return self.thetas @ x


def run_linear_bandit(
    env: LinearEnvironment, rounds: int = 10_000, *, policy: str = "linucb", alpha: float = 0.5, seed: int = 1
) -> float:
    """Cumulative reward of ``policy`` ('linucb' or 'random') on ``env``.

    Context and reward coins come from one stream and the random policy from
    another, so both policies face the same contexts.
    """
    ctx_rng = np.random.default_rng(seed)
    coin_rng = np.random.default_rng(seed + 1)
    pick_rng = np.random.default_rng(seed + 2)
    arm_ids = [f"arm{a}" for a in range(env.n_arms)]
    arms = {a: BanditArmState.fresh(a, env.d) for a in arm_ids}
    total = 0.0
    for _ in range(rounds):
        x = env.context(ctx_rng)
        coin = coin_rng.random()
        if policy == "linucb":
            chosen, _ = bandit_select({a: x for a in arm_ids}, arms, alpha)
        elif policy == "random":
            chosen = arm_ids[int(pick_rng.integers(env.n_arms))]
        else:
            raise ValueError(f"unknown policy {policy!r}")
        mean = env.means(x)[arm_ids.index(chosen)]
        reward = 1.0 if coin < mean else 0.0
        total += reward
        if policy == "linucb":
            arms[chosen] = bandit_update(arms[chosen], x, reward)
    return total
