"""Deterministic component routing and the request pipeline.

Path selection is a pure function of the component's derived sensitivity and
the routing policy; the query text is never inspected to pick a model. Every
invocation, including failures, produces exactly one :class:`AuditRecord`.

Pipeline order is fixed::

    input guard -> retrieval -> generation (selected path)
                -> grounding validation -> output guard
"""

from __future__ import annotations

import enum
import json
import threading
import time
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Protocol

from .grounding import GroundingReport, ref_token, split_sentences, strip_tokens, validate
from .guard import Direction, Guard, GuardVerdict, fallback_for
from .registry import ComponentSpec, Manifest, Sensitivity, UnknownComponentError
from .retrieval import (
    EvidenceTemplate,
    IndexGeneration,
    IndexStore,
    build_evidence_template,
    expand_query,
    hybrid_search,
)

FALLBACK_NO_EVIDENCE = (
    "We could not find verified information to answer this question right now. "
    "Please try rephrasing it or check back after the next data update."
)
FALLBACK_UNAVAILABLE = (
    "This answer is temporarily unavailable. The information shown in this service is general "
    "and is not investment advice."
)


class ModelPath(str, enum.Enum):
    INTERNAL = "INTERNAL"
    EXTERNAL = "EXTERNAL"


class EgressViolation(RuntimeError):
    """Raised if PII-linked content is about to reach the external path."""


@dataclass(frozen=True)
class RoutingPolicy:
    # False is the operational kill-switch: all traffic stays internal.
    allow_external: bool = True


def select_path(component: ComponentSpec, policy: RoutingPolicy) -> ModelPath:
    if component.sensitivity is Sensitivity.PII:
        return ModelPath.INTERNAL
    return ModelPath.EXTERNAL if policy.allow_external else ModelPath.INTERNAL


@dataclass(frozen=True)
class RoutedRequest:
    request_id: str
    user_id: str
    component_id: str
    query_text: str
    received_at: datetime | None = None


@dataclass(frozen=True)
class GenerationContext:
    request_id: str
    component_id: str
    query: str
    template: EvidenceTemplate

    def prompt(self) -> str:
        return f"component: {self.component_id}\nquestion: {self.query}\nevidence:\n{self.template.render()}"


class GenerationAdapter(Protocol):
    path: ModelPath

    def generate(self, context: GenerationContext) -> str: ...


def compose_grounded_text(template: EvidenceTemplate) -> str:
    """One cited sentence per evidence sentence, one sentence per line."""
    lines = []
    for entry in template.entries:
        token = ref_token(entry.doc_id)
        sentences = split_sentences(entry.text) or ["Source"]
        for sentence in sentences:
            body = sentence.rstrip(" .!?。")
            lines.append(f"{body} {token}." if body else f"{token}.")
    return "\n".join(lines)


class TemplateAdapter:
    """Deterministic stand-in for a model: slots evidence into cited sentences."""

    def __init__(self, path: ModelPath) -> None:
        self.path = path
        self.calls = 0
        self._lock = threading.Lock()

    def generate(self, context: GenerationContext) -> str:
        with self._lock:
            self.calls += 1
        return compose_grounded_text(context.template)


@dataclass(frozen=True)
class EgressEntry:
    request_id: str
    component_id: str
    evidence_ids: tuple[str, ...]
    payload: str


class ExternalTemplateAdapter(TemplateAdapter):
    """External-path adapter that keeps a transcript of every byte it receives."""

    def __init__(self) -> None:
        super().__init__(ModelPath.EXTERNAL)
        self.transcript: list[EgressEntry] = []

    def generate(self, context: GenerationContext) -> str:
        with self._lock:
            self.transcript.append(
                EgressEntry(context.request_id, context.component_id, context.template.doc_ids, context.prompt())
            )
        return super().generate(context)


def default_adapters() -> dict[ModelPath, GenerationAdapter]:
    return {ModelPath.INTERNAL: TemplateAdapter(ModelPath.INTERNAL), ModelPath.EXTERNAL: ExternalTemplateAdapter()}


# --- audit -----------------------------------------------------------------


@dataclass(frozen=True)
class AuditRecord:
    request_id: str
    user_id: str
    component_id: str
    model_path: str | None
    status: str
    guard_input_verdict: dict | None = None
    guard_output_verdict: dict | None = None
    evidence_ids: tuple[str, ...] = ()
    index_generation: int | None = None
    latency_ms: int = 0
    fallback_used: bool = False
    generated: bool = False
    groundedness: float | None = None
    grounding_passed: bool | None = None
    error: str | None = None
    recorded_at: str = ""

    TIMESTAMP_FIELDS = ("recorded_at",)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["evidence_ids"] = list(self.evidence_ids)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, row: Mapping[str, Any]) -> AuditRecord:
        row = dict(row)
        row["evidence_ids"] = tuple(row.get("evidence_ids", ()))
        return cls(**row)

    @property
    def guard_blocked(self) -> bool:
        """True if this request counts toward the guard rejection rate."""
        return self.status in ("blocked_input", "blocked_output")


class AuditSink(Protocol):
    def append(self, record: AuditRecord) -> int: ...


class MemoryAuditLog:
    def __init__(self) -> None:
        self.records: list[AuditRecord] = []
        self._lock = threading.Lock()

    def append(self, record: AuditRecord) -> int:
        with self._lock:
            self.records.append(record)
            return len(self.records) - 1

    def __len__(self) -> int:
        return len(self.records)


class JsonlAuditLog:
    """Append-only JSONL audit log. Appends are serialized and flushed per record."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._count = sum(1 for _ in read_audit_log(self.path)) if self.path.exists() else 0
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: AuditRecord) -> int:
        with self._lock:
            self._fh.write(record.to_json() + "\n")
            self._fh.flush()
            self._count += 1
            return self._count - 1

    def __len__(self) -> int:
        return self._count

    def close(self) -> None:
        with self._lock:
            if not self._fh.closed:
                self._fh.flush()
                self._fh.close()


def read_audit_log(path: str | Path) -> list[AuditRecord]:
    with open(path, encoding="utf-8") as fh:
        return [AuditRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


# --- router ----------------------------------------------------------------


@dataclass(frozen=True)
class ChatResult:
    request_id: str
    text: str
    display_text: str
    fallback_used: bool
    model_path: ModelPath | None
    status: str
    evidence_ids: tuple[str, ...] = ()
    grounding: GroundingReport | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "text": self.text,
            "display_text": self.display_text,
            "fallback_used": self.fallback_used,
            "model_path": self.model_path.value if self.model_path else None,
            "status": self.status,
            "evidence_ids": list(self.evidence_ids),
            "grounding": self.grounding.to_dict() if self.grounding else None,
        }


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class CallCounters:
    input_screens: int = 0
    retrievals: int = 0
    generations: int = 0
    output_screens: int = 0


class Router:
    """Runs the request pipeline for one manifest, index and guard."""

    def __init__(
        self,
        manifest: Manifest,
        index: IndexStore | IndexGeneration,
        guard: Guard,
        adapters: Mapping[ModelPath, GenerationAdapter] | None = None,
        audit: AuditSink | None = None,
        policy: RoutingPolicy | None = None,
        *,
        ontology: Mapping[str, list[str]] | None = None,
        k: int = 4,
        template_chars: int = 1200,
        clock: Callable[[], datetime] = _utcnow,
        timer: Callable[[], float] = time.perf_counter,
    ) -> None:
        self.manifest = manifest
        self.index = index if isinstance(index, IndexStore) else IndexStore(index)
        self.guard = guard
        self.adapters = dict(adapters) if adapters is not None else default_adapters()
        missing = {ModelPath.INTERNAL, ModelPath.EXTERNAL} - set(self.adapters)
        if missing:
            raise ValueError(f"no adapter registered for {sorted(p.value for p in missing)}")
        self.audit = audit if audit is not None else MemoryAuditLog()
        self.policy = policy or RoutingPolicy()
        self.ontology = ontology or {}
        self.k = k
        self.template_chars = template_chars
        self.clock = clock
        self.timer = timer
        self.counters = CallCounters()
        self._pii_modules = manifest.pii_module_ids()
        self._counter_lock = threading.Lock()

    def _bump(self, name: str) -> None:
        with self._counter_lock:
            setattr(self.counters, name, getattr(self.counters, name) + 1)

    def invoke(self, request: RoutedRequest) -> tuple[ChatResult, AuditRecord]:
        started = self.timer()
        state: dict[str, Any] = {}
        try:
            result = self._run(request, state)
        except UnknownComponentError as exc:
            self._record(request, started, state, status="unknown_component", error=str(exc))
            raise
        except EgressViolation:
            self._record(request, started, state, status="egress_violation", error="blocked PII egress")
            raise
        except Exception as exc:  # adapter or retrieval failure: audited, safe fallback
            state["fallback_used"] = True
            record = self._record(request, started, state, status="error", error=f"{type(exc).__name__}: {exc}")
            return self._fallback_result(request, FALLBACK_UNAVAILABLE, state, "error"), record
        record = self._record(request, started, state, status=state["status"])
        return result, record

    def _fallback_result(self, request: RoutedRequest, text: str, state: dict, status: str) -> ChatResult:
        return ChatResult(
            request_id=request.request_id,
            text=text,
            display_text=text,
            fallback_used=True,
            model_path=state.get("path"),
            status=status,
            evidence_ids=tuple(state.get("evidence_ids", ())),
        )

    def _run(self, request: RoutedRequest, state: dict) -> ChatResult:
        component = self.manifest.get_component(request.component_id)
        path = select_path(component, self.policy)
        state["path"] = path

        self._bump("input_screens")
        verdict_in = self.guard.screen(request.query_text, Direction.INPUT)
        state["verdict_in"] = verdict_in
        if verdict_in.blocked:
            state.update(status="blocked_input", fallback_used=True)
            return self._fallback_result(request, fallback_for(verdict_in), state, "blocked_input")

        self._bump("retrievals")
        index = self.index.current
        when = request.received_at or self.clock()
        retrieved = hybrid_search(
            index,
            expand_query(request.query_text, self.ontology, when.date()),
            self.k,
            modules=component.module_ids,
            user=request.user_id,
        )
        state["generation"] = retrieved.generation
        state["evidence_ids"] = retrieved.doc_ids
        if not retrieved.passages:
            state.update(status="no_evidence", fallback_used=True)
            return self._fallback_result(request, FALLBACK_NO_EVIDENCE, state, "no_evidence")

        template = build_evidence_template(retrieved.passages, self.template_chars)
        state["evidence_ids"] = template.doc_ids
        if path is ModelPath.EXTERNAL:
            leaked = [p.doc_id for p in retrieved.passages if p.source_module in self._pii_modules]
            if component.sensitivity is Sensitivity.PII or leaked:
                raise EgressViolation(f"{component.id}: PII evidence {leaked} bound for external path")

        self._bump("generations")
        state["generated"] = True
        text = self.adapters[path].generate(
            GenerationContext(request.request_id, component.id, request.query_text, template)
        )

        report = validate(text, template.doc_ids)
        state["grounding"] = report

        self._bump("output_screens")
        verdict_out = self.guard.screen(text, Direction.OUTPUT)
        state["verdict_out"] = verdict_out
        if verdict_out.blocked:
            state.update(status="blocked_output", fallback_used=True)
            return self._fallback_result(request, fallback_for(verdict_out), state, "blocked_output")

        state.update(status="ok", fallback_used=False)
        return ChatResult(
            request_id=request.request_id,
            text=text,
            display_text=strip_tokens(text),
            fallback_used=False,
            model_path=path,
            status="ok",
            evidence_ids=template.doc_ids,
            grounding=report,
        )

    def _record(self, request: RoutedRequest, started: float, state: dict, status: str, error: str | None = None) -> AuditRecord:
        verdict_in: GuardVerdict | None = state.get("verdict_in")
        verdict_out: GuardVerdict | None = state.get("verdict_out")
        report: GroundingReport | None = state.get("grounding")
        path: ModelPath | None = state.get("path")
        record = AuditRecord(
            request_id=request.request_id,
            user_id=request.user_id,
            component_id=request.component_id,
            model_path=path.value if path else None,
            status=status,
            guard_input_verdict=verdict_in.to_dict() if verdict_in else None,
            guard_output_verdict=verdict_out.to_dict() if verdict_out else None,
            evidence_ids=tuple(state.get("evidence_ids", ())),
            index_generation=state.get("generation"),
            latency_ms=max(0, round((self.timer() - started) * 1000)),
            fallback_used=bool(state.get("fallback_used", False)),
            generated=bool(state.get("generated", False)),
            groundedness=report.groundedness if report else None,
            grounding_passed=report.passed if report else None,
            error=error,
            recorded_at=self.clock().isoformat(),
        )
        self.audit.append(record)
        return record
