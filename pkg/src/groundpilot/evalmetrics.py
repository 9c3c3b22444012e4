"""Evaluation metrics: routing score, rater agreement, percentiles, replay."""

from __future__ import annotations

import json
import math
import threading
from collections.abc import Collection, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from .recommender.bandit import BanditArmState, bandit_select, bandit_update

# --- routing score -------------------------------------------------------------


@dataclass(frozen=True)
class RoutingCase:
    query: str
    gold: frozenset[str]
    predicted: frozenset[str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold", frozenset(self.gold))
        object.__setattr__(self, "predicted", frozenset(self.predicted))
        if not self.gold:
            raise ValueError("gold component set must be non-empty")

    def check_catalog(self, catalog: Collection[str]) -> None:
        unknown = (self.gold | self.predicted) - set(catalog)
        if unknown:
            raise ValueError(f"components not in catalog: {sorted(unknown)}")


def routing_score(case: RoutingCase, alpha: float = 0.5, beta: float = 0.5) -> float:
    """alpha * hit rate over gold + beta * (1 - extraneous share of predictions).

    With no predictions the second term is 1 (nothing over-generated) and the
    first is 0, so the score is ``beta``.
    """
    hits = len(case.predicted & case.gold) / len(case.gold)
    if case.predicted:
        precision_term = 1.0 - len(case.predicted - case.gold) / len(case.predicted)
    else:
        precision_term = 1.0
    return alpha * hits + beta * precision_term


@dataclass(frozen=True)
class RoutingBatchResult:
    mean: float
    total: float
    scores: tuple[float, ...]

    def to_dict(self) -> dict:
        return {"n": len(self.scores), "mean": self.mean, "sum": self.total, "scores": list(self.scores)}


def routing_score_batch(cases: Sequence[RoutingCase], alpha: float = 0.5, beta: float = 0.5) -> RoutingBatchResult:
    if not cases:
        raise ValueError("routing_score_batch needs at least one case")
    scores = tuple(routing_score(c, alpha, beta) for c in cases)
    # fsum: exact up to final rounding, hence independent of case order
    total = math.fsum(scores)
    return RoutingBatchResult(total / len(scores), total, scores)


def load_routing_cases(path: str | Path, catalog: Collection[str] | None = None) -> list[RoutingCase]:
    cases = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            try:
                case = RoutingCase(row["query"], frozenset(row["gold"]), frozenset(row["predicted"]))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if catalog is not None:
                case.check_catalog(catalog)
            cases.append(case)
    return cases


# --- human QA agreement ----------------------------------------------------------

QA_AXES = ("factuality", "safety", "alignment")


@dataclass(frozen=True)
class QAReview:
    response_id: str
    rater_id: str
    factuality: bool
    safety: bool
    alignment: bool


def contingency(pairs: Iterable[tuple[bool, bool]]) -> np.ndarray:
    """2x2 table, rows = rater 1 (True, False), columns = rater 2 (True, False)."""
    table = np.zeros((2, 2), dtype=np.int64)
    for a, b in pairs:
        table[0 if a else 1, 0 if b else 1] += 1
    return table


def kappa_from_table(table: Sequence[Sequence[int]] | np.ndarray) -> float:
    """(p_o - p_e) / (1 - p_e), evaluated in integers.

    Multiplying through by n^2 gives (n*agree - sum r_i c_i) / (n^2 - sum r_i c_i),
    so the only rounding is the final division. p_e == 1 (both raters
    constant and equal) yields 1.0.
    """
    t = [[int(v) for v in row] for row in np.asarray(table)]
    if any(v < 0 for row in t for v in row):
        raise ValueError("negative count in contingency table")
    n = sum(map(sum, t))
    if n == 0:
        raise ValueError("empty contingency table")
    k = len(t)
    agree = sum(t[i][i] for i in range(k))
    chance = sum(sum(t[i]) * sum(t[j][i] for j in range(k)) for i in range(k))
    if chance == n * n:
        return 1.0
    return (n * agree - chance) / (n * n - chance)


def cohens_kappa(pairs: Sequence[tuple[bool, bool]]) -> float:
    if not pairs:
        raise ValueError("cohens_kappa needs at least one paired judgment")
    return kappa_from_table(contingency(pairs))


def pair_reviews(reviews: Iterable[QAReview], axis: str) -> list[tuple[bool, bool]]:
    """Pair the two raters' judgments per response on one rubric axis.

    Rater order within a pair follows ascending rater id.
    """
    if axis not in QA_AXES:
        raise ValueError(f"unknown axis {axis!r}")
    by_response: dict[str, list[QAReview]] = {}
    for r in reviews:
        by_response.setdefault(r.response_id, []).append(r)
    pairs = []
    for response_id in sorted(by_response):
        group = sorted(by_response[response_id], key=lambda r: r.rater_id)
        if len(group) != 2 or group[0].rater_id == group[1].rater_id:
            raise ValueError(f"response {response_id!r} needs exactly two distinct raters, has {len(group)} reviews")
        pairs.append((getattr(group[0], axis), getattr(group[1], axis)))
    return pairs


def qa_summary(reviews: Sequence[QAReview]) -> dict[str, dict[str, float]]:
    """Pass rate and kappa per rubric axis."""
    out = {}
    for axis in QA_AXES:
        pairs = pair_reviews(reviews, axis)
        flat = [v for pair in pairs for v in pair]
        out[axis] = {"pass_rate": sum(flat) / len(flat), "kappa": cohens_kappa(pairs)}
    return out


# --- serving metrics ------------------------------------------------------------


def percentile(samples: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: element ceil(p/100 * n) (1-based) of the sorted samples."""
    if len(samples) == 0:
        raise ValueError("percentile of empty sample")
    if not 0 < p <= 100:
        raise ValueError("p must be in (0, 100]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(p * len(ordered) / 100))
    return ordered[rank - 1]


class SealedWindowError(RuntimeError):
    pass


@dataclass
class MetricWindow:
    latencies_ms: list[float] = field(default_factory=list)
    verdict_counts: dict[str, int] = field(default_factory=dict)
    coverage: list[float] = field(default_factory=list)
    sealed: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def _check(self) -> None:
        if self.sealed:
            raise SealedWindowError("metric window is sealed")

    def add_latency(self, ms: float) -> None:
        if ms < 0:
            raise ValueError("latency must be non-negative")
        with self._lock:
            self._check()
            self.latencies_ms.append(ms)

    def add_verdict(self, decision: str) -> None:
        with self._lock:
            self._check()
            self.verdict_counts[decision] = self.verdict_counts.get(decision, 0) + 1

    def add_coverage(self, value: float) -> None:
        if not 0.0 <= value <= 1.0:
            raise ValueError("coverage must be in [0, 1]")
        with self._lock:
            self._check()
            self.coverage.append(value)

    def seal(self) -> None:
        with self._lock:
            self.sealed = True

    def latency_percentile(self, p: float) -> float:
        return percentile(self.latencies_ms, p) if self.latencies_ms else 0.0


# --- offline replay ----------------------------------------------------------------


class ReplayPolicy(Protocol):
    def choose(self, contexts: Mapping[str, np.ndarray]) -> str: ...

    def update(self, contexts: Mapping[str, np.ndarray], arm: str, reward: float) -> None: ...


@dataclass(frozen=True)
class LoggedEvent:
    contexts: Mapping[str, np.ndarray]
    arm: str
    reward: float


@dataclass(frozen=True)
class BanditLog:
    arms: tuple[str, ...]
    events: tuple[LoggedEvent, ...]
    logging_policy: str = "uniform"

    def mean_reward(self) -> float:
        return float(np.mean([e.reward for e in self.events]))


@dataclass(frozen=True)
class ReplayResult:
    n_events: int
    matched: int
    estimate: float | None
    std_error: float | None

    def to_dict(self) -> dict:
        return {"events": self.n_events, "matched": self.matched, "estimate": self.estimate, "std_error": self.std_error}


def replay_evaluate(log: BanditLog, policy: ReplayPolicy) -> ReplayResult:
    """Replay estimator: keep events where the policy agrees with the logged arm.

    Unbiased only when the log was collected by a uniform-random logger,
    which the log header must declare. The policy learns from matched events
    only. ``estimate`` is ``None`` when nothing matched.
    """
    if not log.events:
        raise ValueError("empty log")
    if log.logging_policy != "uniform":
        raise ValueError(f"replay needs a uniform-random logging policy, log declares {log.logging_policy!r}")
    rewards = []
    for event in log.events:
        if policy.choose(event.contexts) == event.arm:
            rewards.append(event.reward)
            policy.update(event.contexts, event.arm, event.reward)
    if not rewards:
        return ReplayResult(len(log.events), 0, None, None)
    arr = np.asarray(rewards)
    se = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else None
    return ReplayResult(len(log.events), len(arr), float(arr.mean()), se)


class FixedArmPolicy:
    def __init__(self, arm: str) -> None:
        self.arm = arm

    def choose(self, contexts: Mapping[str, np.ndarray]) -> str:
        return self.arm

    def update(self, contexts: Mapping[str, np.ndarray], arm: str, reward: float) -> None:
        pass


class UniformRandomPolicy:
    def __init__(self, seed: int = 0) -> None:
        self._rng = np.random.default_rng(seed)

    def choose(self, contexts: Mapping[str, np.ndarray]) -> str:
        arms = sorted(contexts)
        return arms[int(self._rng.integers(len(arms)))]

    def update(self, contexts: Mapping[str, np.ndarray], arm: str, reward: float) -> None:
        pass


class LinUCBPolicy:
    def __init__(self, d: int, alpha: float = 0.5) -> None:
        self.d = d
        self.alpha = alpha
        self.arms: dict[str, BanditArmState] = {}

    def _ensure(self, contexts: Mapping[str, np.ndarray]) -> None:
        for a in contexts:
            if a not in self.arms:
                self.arms[a] = BanditArmState.fresh(a, self.d)

    def choose(self, contexts: Mapping[str, np.ndarray]) -> str:
        self._ensure(contexts)
        return bandit_select(contexts, self.arms, self.alpha)[0]

    def update(self, contexts: Mapping[str, np.ndarray], arm: str, reward: float) -> None:
        self._ensure(contexts)
        self.arms[arm] = bandit_update(self.arms[arm], contexts[arm], reward)


def make_policy(name: str, d: int, seed: int = 0, alpha: float = 0.5) -> ReplayPolicy:
    """'linucb', 'random', or 'fixed:<arm_id>'."""
    if name == "linucb":
        return LinUCBPolicy(d, alpha)
    if name == "random":
        return UniformRandomPolicy(seed)
    if name.startswith("fixed:"):
        return FixedArmPolicy(name.split(":", 1)[1])
    raise ValueError(f"unknown policy {name!r}")


def _event_contexts(row: Mapping[str, Any], arms: Sequence[str]) -> dict[str, np.ndarray]:
    ctx = row["context"]
    if isinstance(ctx, Mapping):
        return {a: np.asarray(ctx[a], dtype=float) for a in arms}
    shared = np.asarray(ctx, dtype=float)
    return {a: shared for a in arms}


def load_bandit_log(path: str | Path) -> BanditLog:
    """JSONL: a header line ``{"logging_policy", "arms", "dimension"}``, then
    one ``{"context", "arm", "reward"}`` per event. ``context`` is either one
    shared vector or an object of per-arm vectors."""
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "arms" not in lines[0]:
        raise ValueError(f"{path}: missing header line")
    header, rows = lines[0], lines[1:]
    arms = tuple(header["arms"])
    events = tuple(LoggedEvent(_event_contexts(r, arms), r["arm"], float(r["reward"])) for r in rows)
    return BanditLog(arms, events, header.get("logging_policy", "unknown"))


def write_bandit_log(path: str | Path, log: BanditLog) -> None:
    d = len(next(iter(log.events[0].contexts.values()))) if log.events else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"logging_policy": log.logging_policy, "arms": list(log.arms), "dimension": d}) + "\n")
        for e in log.events:
            ctx = {a: [float(v) for v in x] for a, x in e.contexts.items()}
            fh.write(json.dumps({"context": ctx, "arm": e.arm, "reward": e.reward}) + "\n")


def synthetic_uniform_log(
    arm_means: Mapping[str, float], n_events: int, d: int = 3, seed: int = 0
) -> BanditLog:
    """Uniform-random logger over arms with context-free Bernoulli rewards."""
    rng = np.random.default_rng(seed)
    arms = tuple(sorted(arm_means))
    events = []
    for _ in range(n_events):
        x = rng.normal(size=d)
        arm = arms[int(rng.integers(len(arms)))]
        reward = 1.0 if rng.random() < arm_means[arm] else 0.0
        events.append(LoggedEvent({a: x for a in arms}, arm, reward))
    return BanditLog(arms, tuple(events), "uniform")
