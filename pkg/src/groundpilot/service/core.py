"""Service state shared by the HTTP app and the CLI."""

from __future__ import annotations

import json
import logging
import math
import threading
import time
import uuid
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from ..evalmetrics import percentile
from ..grounding import strip_tokens
from ..guard import RuleGuard
from ..registry import Manifest, load_manifest
from ..retrieval import (
    Document,
    HashingEmbedder,
    IndexStore,
    build_generation,
    load_corpus,
    load_ontology,
)
from ..recommender import (
    CONTEXT_DIM,
    TYPE_IDS,
    ArmStore,
    EventType,
    InsightCard,
    Interaction,
    MarketData,
    RankingTrace,
    RankWeights,
    RuleParams,
    UserData,
    UserProfile,
    load_market,
    load_snapshot,
    load_users,
    pregenerate,
    rank_feed,
    save_snapshot,
    shaped_reward,
)
from ..router import (
    AuditRecord,
    ChatResult,
    JsonlAuditLog,
    MemoryAuditLog,
    RoutedRequest,
    Router,
    RoutingPolicy,
)
from .config import ServiceConfig

log = logging.getLogger(__name__)

AUDIT_FILE = "audit.jsonl"
EVENTS_FILE = "events.jsonl"
ARMS_FILE = "arms.json"


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class UnknownUserError(KeyError):
    pass


class UnknownCardError(KeyError):
    pass


class BadEventError(ValueError):
    pass


# --- audit + event logs -------------------------------------------------------


class ServiceAuditLog:
    """JSONL audit sink that also keeps the records in memory for the gauges."""

    def __init__(self, path: Path | None) -> None:
        self._file = JsonlAuditLog(path) if path is not None else None
        self._memory = MemoryAuditLog()
        self._lock = threading.Lock()

    def append(self, record: AuditRecord) -> int:
        with self._lock:
            if self._file is not None:
                self._file.append(record)
            return self._memory.append(record)

    @property
    def records(self) -> list[AuditRecord]:
        with self._lock:
            return list(self._memory.records)

    def __len__(self) -> int:
        return len(self._memory)

    def close(self) -> None:
        if self._file is not None:
            self._file.close()


@dataclass(frozen=True)
class FeedbackEvent:
    offset: int
    user_id: str
    card_id: str
    insight_type: str
    event: EventType
    ts: datetime
    dwell_ms: int | None = None
    idempotency_key: str | None = None
    reward: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "offset": self.offset,
            "user_id": self.user_id,
            "card_id": self.card_id,
            "insight_type": self.insight_type,
            "event": self.event.value,
            "ts": self.ts.isoformat(),
            "reward": self.reward,
        }
        if self.dwell_ms is not None:
            row["dwell_ms"] = self.dwell_ms
        if self.idempotency_key is not None:
            row["idempotency_key"] = self.idempotency_key
        return row

    @classmethod
    def from_dict(cls, row: Mapping[str, Any]) -> FeedbackEvent:
        return cls(
            offset=int(row["offset"]),
            user_id=row["user_id"],
            card_id=row["card_id"],
            insight_type=row["insight_type"],
            event=EventType(row["event"]),
            ts=datetime.fromisoformat(row["ts"]),
            dwell_ms=row.get("dwell_ms"),
            idempotency_key=row.get("idempotency_key"),
            reward=float(row.get("reward", 0.0)),
        )


class EventLog:
    """Append-only feedback log; the offset is the 0-based line number."""

    def __init__(self, path: Path | None) -> None:
        self.path = path
        self.events: list[FeedbackEvent] = []
        if path is not None and path.exists():
            with open(path, encoding="utf-8") as fh:
                self.events = [FeedbackEvent.from_dict(json.loads(line)) for line in fh if line.strip()]
        self._fh = open(path, "a", encoding="utf-8") if path is not None else None

    @property
    def next_offset(self) -> int:
        return len(self.events)

    def append(self, event: FeedbackEvent) -> None:
        if event.offset != self.next_offset:
            raise ValueError(f"offset {event.offset} != next offset {self.next_offset}")
        if self._fh is not None:
            self._fh.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
            self._fh.flush()
        self.events.append(event)

    def close(self) -> None:
        if self._fh is not None and not self._fh.closed:
            self._fh.flush()
            self._fh.close()


# --- pregen -------------------------------------------------------------------


@dataclass
class PregenReport:
    cycle: int
    started_at: datetime
    emitted: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, dict[str, str]] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def total_emitted(self) -> int:
        return sum(self.emitted.values())

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycle": self.cycle,
            "started_at": self.started_at.isoformat(),
            "users": {
                uid: {"emitted": self.emitted.get(uid, 0), "skipped": self.skipped.get(uid, {})}
                for uid in sorted(set(self.emitted) | set(self.skipped))
            },
            "errors": dict(self.errors),
            "seconds": self.seconds,
        }


@dataclass
class UserPool:
    cards: list[InsightCard]
    generated_at: datetime

    def get(self, card_id: str) -> InsightCard | None:
        return next((c for c in self.cards if c.card_id == card_id), None)


class Scheduler:
    """Calls ``job`` every ``interval`` seconds on a daemon thread."""

    def __init__(self, job: Callable[[], Any], interval: float) -> None:
        if interval <= 0:
            raise ValueError("interval must be positive")
        self.job = job
        self.interval = interval
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(target=self._loop, name="pregen-scheduler", daemon=True)
        self._thread.start()

    def _loop(self) -> None:
        while not self._stop.wait(self.interval):
            try:
                self.job()
            except Exception:  # a failed cycle must not kill the schedule
                log.exception("scheduled pregen cycle failed")

    def stop(self, timeout: float | None = 5.0) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout)
            self._thread = None


# --- metrics ------------------------------------------------------------------


@dataclass(frozen=True)
class AuditGauges:
    requests: int
    blocked: int
    rejection_rate: float
    latency_p50_ms: float | None
    latency_p95_ms: float | None
    groundedness_mean: float | None

    @classmethod
    def from_records(cls, records: Iterable[AuditRecord]) -> AuditGauges:
        records = list(records)
        n = len(records)
        blocked = sum(1 for r in records if r.guard_blocked)
        latencies = [r.latency_ms for r in records]
        grounded = [r.groundedness for r in records if r.groundedness is not None]
        return cls(
            requests=n,
            blocked=blocked,
            rejection_rate=blocked / n if n else 0.0,
            latency_p50_ms=percentile(latencies, 50) if latencies else None,
            latency_p95_ms=percentile(latencies, 95) if latencies else None,
            groundedness_mean=math.fsum(grounded) / len(grounded) if grounded else None,
        )


def _fmt(value: float | int | None) -> str:
    if value is None:
        return "NaN"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


# --- service ------------------------------------------------------------------


class Service:
    """Owns every piece of runtime state. Thread-safe for concurrent requests."""

    def __init__(
        self,
        manifest: Manifest,
        documents: Iterable[Document],
        users: Mapping[str, UserData],
        market: MarketData,
        *,
        state_dir: str | Path | None = None,
        guard: RuleGuard | None = None,
        ontology: Mapping[str, list[str]] | None = None,
        policy: RoutingPolicy | None = None,
        retrieval_k: int = 4,
        template_chars: int = 1200,
        budget: int = 2,
        alpha: float = 0.5,
        weights: RankWeights = RankWeights(),
        rule_params: RuleParams = RuleParams(),
        clock: Callable[[], datetime] = _utcnow,
        timer: Callable[[], float] = time.perf_counter,
        pregen_interval_s: float | None = None,
    ) -> None:
        self.manifest = manifest
        self.users = dict(users)
        self.market = market
        self.state_dir = Path(state_dir) if state_dir is not None else None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
        self.clock = clock
        self.budget = budget
        self.alpha = alpha
        self.weights = weights
        self.rule_params = rule_params

        self.index = IndexStore(build_generation(list(documents), HashingEmbedder()))
        self.audit = ServiceAuditLog(self._state_path(AUDIT_FILE))
        self.router = Router(
            manifest,
            self.index,
            guard or RuleGuard.default(),
            audit=self.audit,
            policy=policy,
            ontology=ontology,
            k=retrieval_k,
            template_chars=template_chars,
            clock=clock,
            timer=timer,
        )

        arms_path = self._state_path(ARMS_FILE)
        if arms_path is not None and arms_path.exists():
            self.arms = load_snapshot(arms_path, TYPE_IDS)
        else:
            self.arms = ArmStore(TYPE_IDS, CONTEXT_DIM)
        self.profiles = {
            uid: UserProfile(uid, frozenset(u.holdings), frozenset(u.watchlist)) for uid, u in self.users.items()
        }
        self.events = EventLog(self._state_path(EVENTS_FILE))
        self._idempotency: dict[str, FeedbackEvent] = {}
        for ev in self.events.events:
            self._apply_to_profile(ev)
            if ev.idempotency_key is not None:
                self._idempotency[ev.idempotency_key] = ev

        self.pools: dict[str, UserPool] = {}
        self.traces: dict[str, RankingTrace] = {}
        self.pregen_reports: list[PregenReport] = []
        self._request_counts: Counter[str] = Counter()
        self._lock = threading.Lock()
        self._feedback_lock = threading.Lock()
        self._pregen_lock = threading.Lock()
        self._trace_seq = 0
        self.scheduler = Scheduler(self.run_pregen_cycle, pregen_interval_s) if pregen_interval_s else None
        self._closed = False

    @classmethod
    def from_config(cls, config: ServiceConfig, **overrides: Any) -> Service:
        manifest = load_manifest(config.manifest, strict=config.strict_manifest)
        rec = config.recommender
        kwargs: dict[str, Any] = dict(
            state_dir=config.state_dir,
            guard=RuleGuard.from_file(config.guard_rules) if config.guard_rules else None,
            ontology=load_ontology(config.ontology) if config.ontology else None,
            policy=RoutingPolicy(allow_external=config.allow_external),
            retrieval_k=config.retrieval_k,
            template_chars=config.template_chars,
            budget=rec.budget,
            alpha=rec.alpha,
            weights=RankWeights(rec.w_rule, rec.w_seq),
            rule_params=RuleParams(
                w_own=rec.w_own,
                w_watch=rec.w_watch,
                w_base=rec.w_base,
                read_multiplier=rec.read_multiplier,
                decay_per_hour=math.log(2) / rec.half_life_hours,
            ),
            pregen_interval_s=config.pregen_interval_s if config.pregen_enabled else None,
        )
        if config.fixed_now is not None:
            pinned = config.fixed_now
            kwargs["clock"] = lambda: pinned
        kwargs.update(overrides)
        return cls(
            manifest,
            load_corpus(config.corpus, manifest.modules),
            load_users(config.users),
            load_market(config.market),
            **kwargs,
        )

    def _state_path(self, name: str) -> Path | None:
        return self.state_dir / name if self.state_dir is not None else None

    def count_request(self, path: str) -> None:
        with self._lock:
            self._request_counts[path] += 1

    # chat ---------------------------------------------------------------------

    def chat(self, user_id: str, component_id: str, query: str, request_id: str | None = None) -> ChatResult:
        req = RoutedRequest(request_id or uuid.uuid4().hex, user_id, component_id, query, self.clock())
        result, _ = self.router.invoke(req)
        return result

    def audit_bad_request(self, error: str, user_id: str = "", component_id: str = "") -> AuditRecord:
        """Audit a chat request rejected before it reached the router."""
        record = AuditRecord(
            request_id=uuid.uuid4().hex,
            user_id=user_id,
            component_id=component_id,
            model_path=None,
            status="bad_request",
            guard_input_verdict=None,
            guard_output_verdict=None,
            evidence_ids=(),
            index_generation=self.index.current.generation,
            latency_ms=0,
            fallback_used=False,
            generated=False,
            groundedness=None,
            grounding_passed=None,
            error=error,
            recorded_at=self.clock().isoformat(),
        )
        self.audit.append(record)
        return record

    # index ----------------------------------------------------------------------

    def ingest(self, documents: Iterable[Document]) -> int:
        return self.index.refresh(documents).generation

    # pregen ---------------------------------------------------------------------

    def run_pregen_cycle(self, user_ids: Iterable[str] | None = None, builders: Mapping | None = None) -> PregenReport:
        with self._pregen_lock:
            started = time.perf_counter()
            report = PregenReport(len(self.pregen_reports) + 1, self.clock())
            for uid in sorted(user_ids if user_ids is not None else self.users):
                try:
                    batch = pregenerate(self.users[uid], self.market, self.clock, builders)
                except Exception as exc:
                    log.warning("pregen failed for user %s: %r", uid, exc)
                    report.errors[uid] = f"{type(exc).__name__}: {exc}"
                    continue
                report.emitted[uid] = len(batch.cards)
                report.skipped[uid] = dict(batch.skipped)
                generated_at = batch.cards[0].created_at if batch.cards else self.clock()
                with self._lock:
                    self.pools[uid] = UserPool(batch.cards, generated_at)
            report.seconds = time.perf_counter() - started
            with self._lock:
                self.pregen_reports.append(report)
            return report

    # feed -----------------------------------------------------------------------

    def _require_user(self, user_id: str) -> UserProfile:
        profile = self.profiles.get(user_id)
        if profile is None:
            raise UnknownUserError(user_id)
        return profile

    def feed(self, user_id: str, budget: int | None = None) -> tuple[str | None, list[InsightCard], RankingTrace]:
        profile = self._require_user(user_id)
        budget = self.budget if budget is None else budget
        if budget < 0:
            raise ValueError("budget must be >= 0")
        pool = self.pools.get(user_id)
        if pool is None or not pool.cards:
            return None, [], RankingTrace((), (), {}, budget)
        with self._feedback_lock:
            trace = rank_feed(
                pool.cards,
                profile,
                self.arms.snapshot(),
                pool.generated_at,
                budget=budget,
                weights=self.weights,
                alpha=self.alpha,
                rule_params=self.rule_params,
            )
        with self._lock:
            self._trace_seq += 1
            trace_id = f"{user_id}.{self._trace_seq}"
            self.traces[trace_id] = trace
        by_id = {c.card_id: c for c in pool.cards}
        return trace_id, [by_id[cid] for cid in trace.final_order], trace

    # feedback -------------------------------------------------------------------

    def _apply_to_profile(self, ev: FeedbackEvent) -> None:
        profile = self.profiles.get(ev.user_id)
        if profile is not None:
            profile.record(Interaction(ev.insight_type, ev.event, ev.ts, ev.card_id, ev.dwell_ms))

    def _context_for(self, user_id: str, card: InsightCard) -> np.ndarray:
        for trace in reversed(list(self.traces.values())):
            ctx = trace.contexts.get(card.card_id)
            if ctx is not None:
                return np.asarray(ctx, dtype=float)
        pool = self.pools[user_id]
        trace = rank_feed(
            pool.cards,
            self.profiles[user_id],
            self.arms.snapshot(),
            pool.generated_at,
            budget=self.budget,
            weights=self.weights,
            alpha=self.alpha,
            rule_params=self.rule_params,
        )
        return np.asarray(trace.contexts[card.card_id], dtype=float)

    def feedback(
        self,
        user_id: str,
        card_id: str,
        event: str,
        dwell_ms: int | None = None,
        idempotency_key: str | None = None,
    ) -> tuple[FeedbackEvent, bool]:
        """Record one event. Returns (event, duplicate)."""
        try:
            kind = EventType(event)
        except ValueError:
            raise BadEventError(f"unknown event type {event!r}") from None
        if dwell_ms is not None and dwell_ms < 0:
            raise BadEventError("dwell_ms must be >= 0")
        self._require_user(user_id)
        pool = self.pools.get(user_id)
        card = pool.get(card_id) if pool is not None else None
        if card is None:
            raise UnknownCardError(card_id)
        with self._feedback_lock:
            if idempotency_key is not None and idempotency_key in self._idempotency:
                return self._idempotency[idempotency_key], True
            context = self._context_for(user_id, card)
            reward = shaped_reward(kind is not EventType.IMPRESSION, dwell_ms)
            ev = FeedbackEvent(
                offset=self.events.next_offset,
                user_id=user_id,
                card_id=card_id,
                insight_type=card.insight_type,
                event=kind,
                ts=self.clock(),
                dwell_ms=dwell_ms,
                idempotency_key=idempotency_key,
                reward=reward,
            )
            self.events.append(ev)
            self._apply_to_profile(ev)
            self.arms.update(card.insight_type, context, reward)
            if idempotency_key is not None:
                self._idempotency[idempotency_key] = ev
            self.save_arms()
            return ev, False

    def save_arms(self) -> None:
        path = self._state_path(ARMS_FILE)
        if path is not None:
            save_snapshot(path, self.arms)

    # metrics --------------------------------------------------------------------

    def gauges(self) -> AuditGauges:
        return AuditGauges.from_records(self.audit.records)

    def metrics_text(self) -> str:
        g = self.gauges()
        with self._lock:
            counts = dict(self._request_counts)
            reports = list(self.pregen_reports)
        lines = ["# groundpilot metrics v1"]
        for path in sorted(counts):
            lines.append(f'groundpilot_requests_total{{path="{path}"}} {counts[path]}')
        lines.append(f"groundpilot_chat_audited_total {g.requests}")
        lines.append(f"groundpilot_guard_blocked_total {g.blocked}")
        lines.append(f"groundpilot_guard_rejection_rate {_fmt(g.rejection_rate)}")
        lines.append(f"groundpilot_chat_latency_p50_ms {_fmt(g.latency_p50_ms)}")
        lines.append(f"groundpilot_chat_latency_p95_ms {_fmt(g.latency_p95_ms)}")
        lines.append(f"groundpilot_groundedness_mean {_fmt(g.groundedness_mean)}")
        lines.append(f"groundpilot_index_generation {self.index.current.generation}")
        lines.append(f"groundpilot_feedback_events_total {self.events.next_offset}")
        for arm, n in self.arms.pull_counts().items():
            lines.append(f'groundpilot_bandit_pulls_total{{arm="{arm}"}} {n}')
        lines.append(f"groundpilot_pregen_cycles_total {len(reports)}")
        emitted = sum(r.total_emitted for r in reports)
        lines.append(f"groundpilot_pregen_cards_total {emitted}")
        per_item = math.fsum(r.seconds for r in reports) / emitted if emitted else None
        lines.append(f"groundpilot_pregen_seconds_per_item {_fmt(per_item)}")
        return "\n".join(lines) + "\n"

    # lifecycle ------------------------------------------------------------------

    def start(self) -> None:
        if self.scheduler is not None:
            self.scheduler.start()

    def shutdown(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self.scheduler is not None:
            self.scheduler.stop()
        with self._feedback_lock:
            self.save_arms()
            self.events.close()
        self.audit.close()

    def display_text(self, card: InsightCard) -> str:
        return strip_tokens(card.body)
