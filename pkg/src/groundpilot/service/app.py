"""HTTP surface over :class:`Service`."""

from __future__ import annotations

import json
from contextlib import asynccontextmanager
from typing import Literal

from fastapi import FastAPI, Header, Query, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, ConfigDict, Field

from ..registry import UnknownComponentError
from .core import BadEventError, Service, UnknownCardError, UnknownUserError

CHAT_PATH = "/v1/chat"


class ChatRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    user_id: str = Field(min_length=1)
    component_id: str = Field(min_length=1)
    query: str = Field(min_length=1)


class GroundingSummary(BaseModel):
    groundedness: float
    passed: bool
    sentences: int
    cited_sentences: int
    unresolved: list[str]


class ChatResponse(BaseModel):
    request_id: str
    text: str
    grounding: GroundingSummary | None
    fallback_used: bool
    status: str
    evidence_ids: list[str]


class FeedItem(BaseModel):
    card_id: str
    insight_type: str
    text: str


class FeedResponse(BaseModel):
    user_id: str
    trace_id: str | None
    budget: int
    items: list[FeedItem]


class FeedbackRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    user_id: str = Field(min_length=1)
    card_id: str = Field(min_length=1)
    event: str
    dwell_ms: int | None = Field(default=None, ge=0)


class FeedbackAck(BaseModel):
    status: Literal["accepted", "duplicate"]
    offset: int
    arm: str
    reward: float
    pull_count: int


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(service: Service, *, manage_lifecycle: bool = True) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_: FastAPI):
        if manage_lifecycle:
            service.start()
        try:
            yield
        finally:
            if manage_lifecycle:
                service.shutdown()

    app = FastAPI(title="groundpilot", version="1.0", lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        if request.url.path == CHAT_PATH:
            body = exc.body if isinstance(exc.body, dict) else {}
            service.audit_bad_request(
                "malformed request body",
                user_id=str(body.get("user_id", "")),
                component_id=str(body.get("component_id", "")),
            )
        detail = json.loads(json.dumps(exc.errors(), default=str))
        return JSONResponse(status_code=400, content={"error": "malformed request", "detail": detail})

    @app.post(CHAT_PATH, response_model=ChatResponse)
    def chat(body: ChatRequest):
        service.count_request(CHAT_PATH)
        try:
            result = service.chat(body.user_id, body.component_id, body.query)
        except UnknownComponentError as exc:
            return _error(404, f"unknown component {exc.component_id!r}")
        except Exception as exc:  # the router has already audited it
            return _error(500, f"internal error: {type(exc).__name__}")
        g = result.grounding
        return ChatResponse(
            request_id=result.request_id,
            text=result.display_text,
            grounding=GroundingSummary(
                groundedness=g.groundedness,
                passed=g.passed,
                sentences=g.total_sentences,
                cited_sentences=g.grounded_sentences,
                unresolved=list(g.unresolved_tokens),
            )
            if g is not None
            else None,
            fallback_used=result.fallback_used,
            status=result.status,
            evidence_ids=list(result.evidence_ids),
        )

    @app.get("/v1/feed/{user_id}", response_model=FeedResponse)
    def feed(user_id: str, budget: int | None = Query(default=None, ge=0)):
        service.count_request("/v1/feed")
        try:
            trace_id, cards, trace = service.feed(user_id, budget)
        except UnknownUserError:
            return _error(404, f"unknown user {user_id!r}")
        return FeedResponse(
            user_id=user_id,
            trace_id=trace_id,
            budget=trace.budget,
            items=[FeedItem(card_id=c.card_id, insight_type=c.insight_type, text=service.display_text(c)) for c in cards],
        )

    @app.post("/v1/feedback", response_model=FeedbackAck)
    def feedback(body: FeedbackRequest, idempotency_key: str | None = Header(default=None)):
        service.count_request("/v1/feedback")
        try:
            ev, duplicate = service.feedback(body.user_id, body.card_id, body.event, body.dwell_ms, idempotency_key)
        except BadEventError as exc:
            return _error(400, str(exc))
        except UnknownUserError:
            return _error(404, f"unknown user {body.user_id!r}")
        except UnknownCardError:
            return _error(404, f"unknown card {body.card_id!r}")
        return FeedbackAck(
            status="duplicate" if duplicate else "accepted",
            offset=ev.offset,
            arm=ev.insight_type,
            reward=ev.reward,
            pull_count=service.arms.get(ev.insight_type).pull_count,
        )

    @app.get("/metrics", response_class=PlainTextResponse)
    def metrics() -> str:
        service.count_request("/metrics")
        return service.metrics_text()

    return app
