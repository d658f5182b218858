"""HTTP gateway: the monitor as a standalone endpoint plus the full repair pipeline."""

from __future__ import annotations

import logging
import os
import uuid
from contextlib import asynccontextmanager
from dataclasses import asdict
from decimal import Decimal
from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .backends import GenerationParams, ModelBackend
from .core import Speaker, Turn
from .costing import PricingTable, measured_cost, present
from .errors import BudgetError, ContractError, FixtureMissError, TransportError
from .escalation import (
    AlertEmitter,
    AlertSink,
    EscalationPolicy,
    _check_history,
    monitor_turn,
    run_turn,
    utc_now,
)

log = logging.getLogger(__name__)

REQUEST_ID_HEADER = "X-Request-ID"


class TurnIn(BaseModel):
    speaker: Literal["user", "system"]
    text: str


class MonitorRequest(BaseModel):
    history: list[TurnIn] = Field(min_length=1)
    candidate: str
    dialogue_id: str = ""


class ChatRequest(BaseModel):
    history: list[TurnIn] = Field(default_factory=list)
    user_utterance: str
    dialogue_id: str = ""


def _turns(items: list[TurnIn]) -> list[Turn]:
    return [Turn(i, Speaker(t.speaker), t.text) for i, t in enumerate(items, 1)]


def _verdict_json(v) -> dict | None:
    if v is None:
        return None
    return {"label": v.label, "confidence": v.confidence, "justification": v.justification,
            "judge_recovered": v.judge_recovered}


def _cost_json(outcome, pricing: PricingTable) -> dict:
    b = measured_cost([outcome], pricing)
    return {"items": {k: str(present(v, Decimal("0.00000001"))) for k, v in b.items.items()},
            "total": str(present(b.total, Decimal("0.00000001")))}


def create_app(
    *,
    monitor: ModelBackend,
    assistant: ModelBackend | None = None,
    superior: ModelBackend | None = None,
    judge: ModelBackend | None = None,
    policy: EscalationPolicy | None = None,
    params: GenerationParams | None = None,
    pricing: PricingTable | None = None,
    alerts: AlertSink | None = None,
    clock=utc_now,
    bearer_token: str | None = None,
) -> FastAPI:
    """Build the gateway app around already-constructed backends.

    ``/v1/chat`` needs ``assistant`` and ``superior``; without them it answers 503.
    ``alerts`` receives each :class:`AlertEvent`; when it is ``None`` and the
    policy names a webhook, an :class:`AlertEmitter` is created for it.
    """
    policy = policy or EscalationPolicy()
    params = params or GenerationParams()
    if alerts is None and policy.alert_sink:
        alerts = AlertEmitter(policy.alert_sink)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        close = getattr(alerts, "close", None)
        if close is not None:
            close()  # drain queued webhook deliveries

    app = FastAPI(title="breakguard", version="1", lifespan=lifespan)
    app.state.alerts = alerts

    def error(request: Request, status: int, code: str, message: str, **extra) -> JSONResponse:
        rid = request.state.request_id
        log.info("request %s -> %d %s: %s", rid, status, code, message)
        return JSONResponse({"request_id": rid, "error": code, "message": message, **extra},
                            status_code=status, headers={REQUEST_ID_HEADER: rid})

    @app.middleware("http")
    async def request_id(request: Request, call_next):
        rid = request.headers.get(REQUEST_ID_HEADER) or uuid.uuid4().hex
        request.state.request_id = rid
        if bearer_token and request.url.path != "/v1/health":
            if request.headers.get("authorization") != f"Bearer {bearer_token}":
                return JSONResponse({"request_id": rid, "error": "unauthorized", "message": "bad token"},
                                    status_code=401, headers={REQUEST_ID_HEADER: rid})
        response = await call_next(request)
        response.headers[REQUEST_ID_HEADER] = rid
        log.info("request %s %s %s -> %d", rid, request.method, request.url.path, response.status_code)
        return response

    @app.exception_handler(RequestValidationError)
    async def bad_body(request: Request, exc: RequestValidationError):
        detail = "; ".join(f"{'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors())
        return error(request, 400, "invalid_request", detail)

    @app.exception_handler(ContractError)
    async def contract(request: Request, exc: ContractError):
        return error(request, 400, "invalid_request", str(exc))

    @app.exception_handler(BudgetError)
    async def budget(request: Request, exc: BudgetError):
        return error(request, 400, "token_budget_exceeded", str(exc))

    @app.exception_handler(TransportError)
    async def transport(request: Request, exc: TransportError):
        return error(request, 502, "backend_unavailable", str(exc))

    @app.exception_handler(FixtureMissError)
    async def fixture_miss(request: Request, exc: FixtureMissError):
        return error(request, 409, "fixture_miss", str(exc), fingerprint=exc.fingerprint)

    @app.get("/v1/health")
    def health(request: Request):
        return {"request_id": request.state.request_id, "status": "ok",
                "chat": assistant is not None and superior is not None}

    @app.post("/v1/monitor")
    def handle_monitor(body: MonitorRequest, request: Request):
        history = _turns(body.history)
        if history[-1].speaker is not Speaker.USER:
            raise ContractError("history must end with the user turn the candidate answers")
        _check_history(history[:-1])
        candidate = Turn(history[-1].index + 1, Speaker.SYSTEM, body.candidate)
        action, stages, warnings = monitor_turn(history, candidate, monitor, policy,
                                                judge=judge, params=params)
        out = {"request_id": request.state.request_id,
               "verdict": _verdict_json(action.verdict),
               "action": action.kind.value,
               "usage": [asdict(s) for s in stages]}
        if warnings:
            out["warning"] = "; ".join(warnings)
        return out

    @app.post("/v1/chat")
    def handle_chat(body: ChatRequest, request: Request):
        if assistant is None or superior is None:
            return error(request, 503, "chat_disabled", "assistant and superior backends are not configured")
        outcome = run_turn(_turns(body.history), body.user_utterance, assistant, monitor, superior,
                           policy, judge=judge, params=params, dialogue_id=body.dialogue_id,
                           alerts=alerts, clock=clock)
        audit = outcome.to_audit()
        if pricing is not None:
            audit["cost"] = _cost_json(outcome, pricing)
        return {"request_id": request.state.request_id, "final_response": outcome.final_response,
                "audit": audit}

    return app


def app_from_config(cfg) -> FastAPI:
    """Build the app from a :class:`~breakguard.config.GatewayConfig`."""
    from .config import build_backends

    cfg.validate()
    b = build_backends(cfg)
    alerts = None
    if cfg.policy.alert_sink:
        alerts = AlertEmitter(cfg.policy.alert_sink, retry_budget=cfg.alert_retry_budget,
                              dead_letter_path=cfg.dead_letter_path)
    return create_app(monitor=b["monitor"], assistant=b.get("assistant"), superior=b.get("superior"),
                      judge=b.get("judge"), policy=cfg.policy, params=cfg.params,
                      pricing=cfg.pricing(), alerts=alerts,
                      bearer_token=os.environ.get("BREAKGUARD_GATEWAY_TOKEN"))
