"""Per-turn detect, explain, escalate loop.

For each user message the assistant drafts a candidate reply, the monitor
labels it, and :func:`decide` either accepts the candidate or escalates it to
the superior model.  When the superior model is called, its prompt includes
the monitor's justification.  Confident breakdown verdicts also raise an
:class:`AlertEvent` for a human agent.  Alerts go to a webhook, and any alert
that cannot be delivered is written to a dead-letter file.
"""

from __future__ import annotations

import datetime as dt
import enum
import json
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import httpx

from .backends import (
    GenerationParams,
    ModelBackend,
    ParseFailure,
    RawCompletion,
    complete,
    judge_recover_with_usage,
    parse_verdict,
)
from .core import Dialogue, Language, MonitorVerdict, Speaker, Turn, validate_dialogue
from .errors import ContractError, GenerationError, TransportError, UnrecoverableOutputError
from .prompting import (
    PromptConfig,
    Segment,
    Strategy,
    StrategyKind,
    load_template,
    make_bundle,
    render_prompt,
    render_turns,
)

log = logging.getLogger(__name__)

Clock = Callable[[], dt.datetime]


def utc_now() -> dt.datetime:
    return dt.datetime.now(dt.timezone.utc)


class ActionKind(str, enum.Enum):
    ACCEPT = "accept"
    ESCALATE = "escalate"
    ESCALATE_AND_ALERT = "escalate_and_alert"

    @property
    def escalates(self) -> bool:
        return self is not ActionKind.ACCEPT


class Disposition(str, enum.Enum):
    ESCALATE = "escalate"
    ACCEPT = "accept"


@dataclass(frozen=True)
class EscalationPolicy:
    """Thresholds for accepting, escalating and alerting.

    ``threshold`` is the minimum confidence needed to accept a non-breakdown
    verdict.  Setting ``accept_below_threshold`` switches to the inverted rule
    (accept when the confidence is *below* the threshold). That rule is kept
    only for compatibility and is off by default.
    """

    threshold: float = 0.5
    alert_threshold: float = 0.95
    on_unrecoverable: Disposition = Disposition.ESCALATE
    alert_sink: str | None = None
    accept_below_threshold: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.threshold <= self.alert_threshold <= 1.0:
            raise ContractError(
                f"need 0 <= threshold ({self.threshold}) <= alert_threshold ({self.alert_threshold}) <= 1")


def decide(v: MonitorVerdict, p: EscalationPolicy) -> ActionKind:
    if not 0.0 <= v.confidence <= 1.0:
        raise ContractError("verdict confidence outside [0, 1]")
    if p.accept_below_threshold:
        accept = v.label == 0 and v.confidence < p.threshold
    else:
        accept = v.label == 0 and v.confidence >= p.threshold
    if accept:
        return ActionKind.ACCEPT
    if v.label == 1 and v.confidence > p.alert_threshold:
        return ActionKind.ESCALATE_AND_ALERT
    return ActionKind.ESCALATE


@dataclass(frozen=True)
class TurnAction:
    kind: ActionKind
    verdict: MonitorVerdict | None
    repaired_response: str | None = None

    def __post_init__(self) -> None:
        if self.kind is ActionKind.ACCEPT and self.repaired_response is not None:
            raise ContractError("an accepted turn carries no repaired response")


@dataclass(frozen=True)
class AlertEvent:
    dialogue_id: str
    turn_index: int
    justification: str
    confidence: float
    timestamp: str

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


# -- alert delivery ------------------------------------------------------------


@dataclass(frozen=True)
class DeliveryReceipt:
    status: str  # "delivered" or "dead_lettered"
    attempts: int
    detail: str = ""


def _dead_letter(path: Path, event: AlertEvent, attempts: int, error: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps({"event": event.to_dict(), "attempts": attempts, "error": error},
                            ensure_ascii=False) + "\n")


def emit_alert(
    e: AlertEvent,
    sink: str,
    *,
    retry_budget: int = 2,
    dead_letter_path: str | Path = "alerts.deadletter.jsonl",
    client: httpx.Client | None = None,
    timeout: float = 5.0,
    backoff: float = 0.0,
    sleep: Callable[[float], None] = time.sleep,
) -> DeliveryReceipt:
    """POST one alert, retrying up to ``retry_budget`` times, dead-lettering on failure."""
    own = client is None
    client = client or httpx.Client()
    error = ""
    attempts = 0
    try:
        for attempt in range(retry_budget + 1):
            if attempt and backoff:
                sleep(backoff * 2 ** (attempt - 1))
            attempts += 1
            try:
                resp = client.post(sink, json=e.to_dict(), timeout=timeout)
            except httpx.HTTPError as exc:
                error = f"{type(exc).__name__}: {exc}"
                continue
            if 200 <= resp.status_code < 300:
                return DeliveryReceipt("delivered", attempts)
            error = f"HTTP {resp.status_code}"
    finally:
        if own:
            client.close()
    log.error("alert for %s turn %d dead-lettered after %d attempts: %s",
              e.dialogue_id, e.turn_index, attempts, error)
    _dead_letter(Path(dead_letter_path), e, attempts, error)
    return DeliveryReceipt("dead_lettered", attempts, error)


class AlertEmitter:
    """Delivers alerts on one background worker, so deliveries keep submission order."""

    def __init__(
        self,
        sink: str,
        retry_budget: int = 2,
        dead_letter_path: str | Path = "alerts.deadletter.jsonl",
        client: httpx.Client | None = None,
        timeout: float = 5.0,
        backoff: float = 0.0,
    ):
        self.sink = sink
        self.retry_budget = retry_budget
        self.dead_letter_path = Path(dead_letter_path)
        self.timeout = timeout
        self.backoff = backoff
        self._client = client or httpx.Client()
        self._pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="alerts")

    def emit(self, event: AlertEvent) -> DeliveryReceipt:
        return emit_alert(event, self.sink, retry_budget=self.retry_budget,
                          dead_letter_path=self.dead_letter_path, client=self._client,
                          timeout=self.timeout, backoff=self.backoff)

    def submit(self, event: AlertEvent) -> Future[DeliveryReceipt]:
        return self._pool.submit(self.emit, event)

    __call__ = submit

    def close(self) -> None:
        self._pool.shutdown(wait=True)

    def __enter__(self) -> AlertEmitter:
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class AlertCollector:
    """In-memory alert sink, useful when no webhook is configured."""

    def __init__(self) -> None:
        self.events: list[AlertEvent] = []
        self._lock = threading.Lock()

    def __call__(self, event: AlertEvent) -> Future[DeliveryReceipt]:
        with self._lock:
            self.events.append(event)
        fut: Future[DeliveryReceipt] = Future()
        fut.set_result(DeliveryReceipt("delivered", 1))
        return fut


AlertSink = Callable[[AlertEvent], "Future[DeliveryReceipt]"]


# -- prompts for the assistant and superior tiers -----------------------------


def assistant_bundle(history: Sequence[Turn], config: PromptConfig | None = None):
    config = config or PromptConfig()
    return make_bundle([
        Segment("instruction", load_template("assistant", config.instruction_language).substitute()),
        Segment("context", "Dialogue:\n" + render_turns(history)),
    ], config)


def repair_instruction(justification: str, config: PromptConfig | None = None) -> str:
    config = config or PromptConfig()
    lang = config.instruction_language
    if not justification:
        return load_template("repair_generic", lang).substitute()
    stop = "" if justification.rstrip()[-1:] in ".!?" else "."
    return load_template("repair", lang).substitute(justification=justification, stop=stop)


def repair_bundle(history: Sequence[Turn], candidate: str, justification: str,
                  config: PromptConfig | None = None):
    config = config or PromptConfig()
    return make_bundle([
        Segment("context", "Dialogue history:\n" + render_turns(history)),
        Segment("candidate", f"Response:\n{candidate}"),
        Segment("repair_instruction", repair_instruction(justification, config)),
    ], config)


def _repair_completion(superior: ModelBackend, history: Sequence[Turn], candidate: str,
                       justification: str, params: GenerationParams,
                       config: PromptConfig | None = None) -> RawCompletion:
    c = complete(superior, repair_bundle(history, candidate, justification, config), params)
    if not c.text.strip():
        raise GenerationError(f"{superior.backend_id} returned an empty rewrite")
    return c


def repair(superior: ModelBackend, history: Sequence[Turn], candidate: str, justification: str,
           params: GenerationParams) -> str:
    """Ask the superior model to rewrite ``candidate`` given why it was flagged.

    An empty justification falls back to the generic rewrite instruction.
    """
    return _repair_completion(superior, history, candidate, justification, params).text


# -- the turn loop ---------------------------------------------------------------


@dataclass(frozen=True)
class StageUsage:
    stage: str  # assistant | monitor | judge | superior
    backend_id: str
    prompt_tokens: int
    completion_tokens: int
    latency: float

    @classmethod
    def of(cls, stage: str, c: RawCompletion) -> StageUsage:
        return cls(stage, c.backend_id, c.prompt_tokens, c.completion_tokens, c.latency)

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class TurnOutcome:
    dialogue_id: str
    turn_index: int
    user_utterance: str
    candidate: str
    action: TurnAction
    final_response: str
    stages: tuple[StageUsage, ...]
    alert: AlertEvent | None = None
    warnings: tuple[str, ...] = ()
    receipt: Future | None = field(default=None, compare=False, repr=False)

    @property
    def verdict(self) -> MonitorVerdict | None:
        return self.action.verdict

    @property
    def escalated(self) -> bool:
        return self.action.kind.escalates

    def stage(self, name: str) -> list[StageUsage]:
        return [s for s in self.stages if s.stage == name]

    def to_audit(self) -> dict[str, Any]:
        v = self.verdict
        return {
            "dialogue_id": self.dialogue_id,
            "turn_index": self.turn_index,
            "user_utterance": self.user_utterance,
            "candidate": self.candidate,
            "verdict": None if v is None else {
                "label": v.label, "confidence": v.confidence,
                "justification": v.justification, "notes": list(v.notes),
            },
            "action": self.action.kind.value,
            "final_response": self.final_response,
            "repaired": self.action.repaired_response is not None,
            "stages": [asdict(s) for s in self.stages],
            "alert": None if self.alert is None else self.alert.to_dict(),
            "warnings": list(self.warnings),
        }


def _check_history(history: Sequence[Turn]) -> None:
    report = validate_dialogue(Dialogue("history", Language.ENGLISH, tuple(history)))
    if not report.ok:
        raise ContractError("; ".join(f"turn {v.turn_index}: {v.message}" for v in report.violations))
    if history and history[-1].speaker is not Speaker.SYSTEM:
        raise ContractError("history must end with a system turn before a new user utterance")


def _next_index(history: Sequence[Turn]) -> int:
    return history[-1].index + 1 if history else 1


ZERO_SHOT = Strategy(StrategyKind.ZS)


def monitor_turn(
    history: Sequence[Turn],
    candidate: Turn,
    monitor: ModelBackend,
    policy: EscalationPolicy,
    *,
    judge: ModelBackend | None = None,
    params: GenerationParams | None = None,
    strategy: Strategy = ZERO_SHOT,
    config: PromptConfig | None = None,
) -> tuple[TurnAction, list[StageUsage], list[str]]:
    """Run the monitor (plus judge fallback) on one candidate and decide the action."""
    params = params or GenerationParams()
    stages: list[StageUsage] = []
    warnings: list[str] = []
    mc = complete(monitor, render_prompt(history, candidate, strategy, config=config), params)
    stages.append(StageUsage.of("monitor", mc))
    parsed = parse_verdict(mc)
    if isinstance(parsed, ParseFailure):
        verdict = None
        try:
            if judge is None:
                raise UnrecoverableOutputError("no judge configured", parsed.raw)
            if not parsed.raw.strip():
                raise UnrecoverableOutputError("monitor returned empty output", parsed.raw)
            verdict, jc = judge_recover_with_usage(judge, parsed, params, config)
            stages.append(StageUsage.of("judge", jc))
        except (UnrecoverableOutputError, TransportError) as exc:
            warnings.append(f"unrecoverable_monitor_output: {parsed.reason.value}: {exc}")
        if verdict is None:
            kind = (ActionKind.ACCEPT if policy.on_unrecoverable is Disposition.ACCEPT
                    else ActionKind.ESCALATE)
            return TurnAction(kind, None), stages, warnings
        parsed = verdict
    return TurnAction(decide(parsed, policy), parsed), stages, warnings


def run_turn(
    history: Sequence[Turn],
    user_utterance: str,
    assistant: ModelBackend,
    monitor: ModelBackend,
    superior: ModelBackend,
    p: EscalationPolicy,
    *,
    judge: ModelBackend | None = None,
    params: GenerationParams | None = None,
    dialogue_id: str = "",
    alerts: AlertSink | None = None,
    clock: Clock = utc_now,
    monitor_strategy: Strategy = ZERO_SHOT,
    config: PromptConfig | None = None,
) -> TurnOutcome:
    """Generate, monitor and, if needed, repair one system turn.

    Assistant and monitor transport failures abort the turn.  A failed repair
    keeps the candidate and raises an alert instead of dropping the turn.
    """
    params = params or GenerationParams()
    history = list(history)
    _check_history(history)
    user_turn = Turn(_next_index(history), Speaker.USER, user_utterance)
    context = history + [user_turn]

    ac = complete(assistant, assistant_bundle(context, config), params)
    stages = [StageUsage.of("assistant", ac)]
    candidate = ac.text.strip()
    system_turn = Turn(user_turn.index + 1, Speaker.SYSTEM, candidate)

    action, monitor_stages, warnings = monitor_turn(
        context, system_turn, monitor, p, judge=judge, params=params,
        strategy=monitor_strategy, config=config)
    stages += monitor_stages
    verdict = action.verdict
    justification = verdict.justification if verdict else ""
    confidence = verdict.confidence if verdict else 0.0

    final = candidate
    raise_alert = action.kind is ActionKind.ESCALATE_AND_ALERT
    if action.kind.escalates:
        try:
            rc = _repair_completion(superior, context, candidate, justification, params, config)
        except (TransportError, GenerationError) as exc:
            warnings.append(f"repair_failed: {exc}")
            raise_alert = True
        else:
            stages.append(StageUsage.of("superior", rc))
            final = rc.text.strip()
            action = TurnAction(action.kind, verdict, final)

    alert = receipt = None
    if raise_alert:
        alert = AlertEvent(dialogue_id, system_turn.index, justification, confidence,
                           clock().isoformat())
        if alerts is not None:
            receipt = alerts(alert)
    return TurnOutcome(dialogue_id, system_turn.index, user_utterance, candidate, action, final,
                       tuple(stages), alert, tuple(warnings), receipt)


@dataclass
class Pipeline:
    """Backends and policy bundled together; runs whole dialogues turn by turn."""

    assistant: ModelBackend
    monitor: ModelBackend
    superior: ModelBackend
    policy: EscalationPolicy = field(default_factory=EscalationPolicy)
    judge: ModelBackend | None = None
    params: GenerationParams = field(default_factory=GenerationParams)
    alerts: AlertSink | None = None
    clock: Clock = utc_now
    monitor_strategy: Strategy = ZERO_SHOT
    config: PromptConfig | None = None

    def run_turn(self, history: Sequence[Turn], user_utterance: str, dialogue_id: str = "") -> TurnOutcome:
        return run_turn(history, user_utterance, self.assistant, self.monitor, self.superior, self.policy,
                        judge=self.judge, params=self.params, dialogue_id=dialogue_id,
                        alerts=self.alerts, clock=self.clock, monitor_strategy=self.monitor_strategy,
                        config=self.config)

    def run_dialogue(self, user_utterances: Sequence[str], dialogue_id: str = "",
                     history: Sequence[Turn] = ()) -> list[TurnOutcome]:
        """Process user messages strictly in order; each final response joins the history."""
        history = list(history)
        outcomes = []
        for u in user_utterances:
            out = self.run_turn(history, u, dialogue_id)
            history += [Turn(out.turn_index - 1, Speaker.USER, u),
                        Turn(out.turn_index, Speaker.SYSTEM, out.final_response)]
            outcomes.append(out)
        return outcomes


def audit_log(outcomes: Sequence[TurnOutcome]) -> str:
    """JSON-lines audit trail with stable key order."""
    return "".join(json.dumps(o.to_audit(), sort_keys=True, ensure_ascii=False) + "\n" for o in outcomes)
