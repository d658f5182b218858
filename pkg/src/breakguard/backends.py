"""Model backends and monitor-output parsing.

Every backend exposes ``backend_id`` and ``complete(bundle, params)``.  Three
implementations ship here:

* :class:`RemoteBackend` talks the chat-completions wire protocol over HTTP;
* :class:`ScriptedBackend` returns programmed replies for tests and demos;
* :class:`RecordingBackend` / :class:`ReplayBackend` store and replay
  completions in a content-addressed fixture directory.

:func:`parse_verdict` turns completion text into a :class:`MonitorVerdict` or
returns a :class:`ParseFailure` value; :func:`judge_recover` asks a second
model to reinterpret text that failed to parse.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import os
import threading
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Mapping, Protocol, Sequence, Union

import httpx

from .core import MonitorVerdict
from .errors import (
    BudgetError,
    ContractError,
    FixtureMissError,
    GenerationError,
    TransportError,
    UnrecoverableOutputError,
)
from .prompting import (
    DECISION_WORDS,
    RESPONSE_SCHEMA,
    PromptBundle,
    PromptConfig,
    Segment,
    load_template,
    make_bundle,
    response_instruction,
    word_estimator,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "BREAKGUARD_API_KEY"
API_BASE_ENV = "BREAKGUARD_API_BASE"


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.0
    max_total_tokens: int = 2048
    timeout: float = 30.0
    retry_budget: int = 2

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ContractError("temperature must be >= 0")
        if self.max_total_tokens < 1:
            raise ContractError("max_total_tokens must be >= 1")
        if self.retry_budget < 0:
            raise ContractError("retry_budget must be >= 0")


@dataclass(frozen=True)
class RawCompletion:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    backend_id: str

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ContractError("token counts must be >= 0")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> RawCompletion:
        return cls(str(d["text"]), int(d["prompt_tokens"]), int(d["completion_tokens"]),
                   float(d["latency"]), str(d["backend_id"]))


class ModelBackend(Protocol):
    backend_id: str

    def complete(self, bundle: PromptBundle, params: GenerationParams) -> RawCompletion: ...


def complete(backend: ModelBackend, bundle: PromptBundle, params: GenerationParams) -> RawCompletion:
    """Run one request through ``backend`` after checking the token cap."""
    if bundle.estimated_tokens > params.max_total_tokens:
        raise BudgetError(bundle.estimated_tokens, params.max_total_tokens)
    return backend.complete(bundle, params)


# -- scripted ----------------------------------------------------------------


@dataclass(frozen=True)
class ScriptedReply:
    """A programmed completion; token counts default to estimates when omitted."""

    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


ScriptItem = Union[str, ScriptedReply, BaseException]
Script = Union[ScriptItem, Sequence[ScriptItem], Callable[[PromptBundle, GenerationParams], ScriptItem]]


class ScriptedBackend:
    """Deterministic backend returning programmed replies.

    ``script`` may be a single reply (returned every time), a sequence (consumed
    in call order) or a callable of ``(bundle, params)``.  An exception instance
    in place of a reply is raised, which simulates transport failures.  Every
    request bundle is kept in ``calls``.
    """

    def __init__(self, script: Script, backend_id: str = "scripted"):
        self.backend_id = backend_id
        self._script = script
        self._cursor = 0
        self._lock = threading.Lock()
        self.calls: list[PromptBundle] = []

    def _next(self, bundle: PromptBundle, params: GenerationParams) -> ScriptItem:
        s = self._script
        if callable(s) and not isinstance(s, (str, ScriptedReply, BaseException)):
            return s(bundle, params)
        if isinstance(s, (str, ScriptedReply, BaseException)):
            return s
        if self._cursor >= len(s):
            raise GenerationError(f"script for {self.backend_id} is exhausted after {len(s)} replies")
        item = s[self._cursor]
        self._cursor += 1
        return item

    def complete(self, bundle: PromptBundle, params: GenerationParams) -> RawCompletion:
        start = time.perf_counter()
        with self._lock:
            self.calls.append(bundle)
            item = self._next(bundle, params)
        if isinstance(item, BaseException):
            raise item
        reply = item if isinstance(item, ScriptedReply) else ScriptedReply(str(item))
        prompt = reply.prompt_tokens if reply.prompt_tokens is not None else bundle.estimated_tokens
        completion = (reply.completion_tokens if reply.completion_tokens is not None
                      else word_estimator(reply.text))
        return RawCompletion(reply.text, prompt, completion, time.perf_counter() - start, self.backend_id)


# -- remote ------------------------------------------------------------------

_RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class RemoteBackend:
    """Chat-completions client with bounded retries and an in-flight request limit."""

    def __init__(
        self,
        model: str,
        base_url: str | None = None,
        api_key: str | None = None,
        backend_id: str | None = None,
        max_in_flight: int = 4,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.model = model
        self.backend_id = backend_id or model
        self.base_url = (base_url or os.environ.get(API_BASE_ENV) or "https://openrouter.ai/api/v1").rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._backoff = backoff
        self._sleep = sleep
        self._client = client or httpx.Client()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def health_check(self, timeout: float = 5.0) -> None:
        """Raise :class:`TransportError` unless the endpoint answers at all."""
        try:
            self._client.get(f"{self.base_url}/models", headers=self._headers(), timeout=timeout)
        except httpx.HTTPError as exc:
            raise TransportError(f"{self.backend_id}: cannot reach {self.base_url}: {exc}") from exc

    def complete(self, bundle: PromptBundle, params: GenerationParams) -> RawCompletion:
        payload = {
            "model": self.model,
            "messages": bundle.to_chat_messages(),
            "temperature": params.temperature,
            "max_tokens": max(1, params.max_total_tokens - bundle.estimated_tokens),
        }
        last: str = ""
        with self._slots:
            start = time.perf_counter()
            for attempt in range(params.retry_budget + 1):
                if attempt:
                    self._sleep(self._backoff * 2 ** (attempt - 1))
                try:
                    resp = self._client.post(f"{self.base_url}/chat/completions", json=payload,
                                             headers=self._headers(), timeout=params.timeout)
                except httpx.HTTPError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    log.warning("%s attempt %d failed: %s", self.backend_id, attempt + 1, last)
                    continue
                if resp.status_code in _RETRYABLE_STATUS:
                    last = f"HTTP {resp.status_code}"
                    log.warning("%s attempt %d got %s", self.backend_id, attempt + 1, last)
                    continue
                if resp.status_code >= 400:
                    raise TransportError(f"{self.backend_id}: HTTP {resp.status_code}: {resp.text[:200]}")
                return self._to_completion(resp.json(), bundle, time.perf_counter() - start)
        raise TransportError(f"{self.backend_id}: gave up after {params.retry_budget + 1} attempts ({last})")

    def _to_completion(self, body: dict, bundle: PromptBundle, latency: float) -> RawCompletion:
        try:
            text = body["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"{self.backend_id}: malformed completion body") from exc
        usage = body.get("usage") or {}
        return RawCompletion(
            text,
            int(usage.get("prompt_tokens", bundle.estimated_tokens)),
            int(usage.get("completion_tokens", word_estimator(text))),
            latency,
            self.backend_id,
        )


# -- record / replay -----------------------------------------------------------


def canonical_request(bundle: PromptBundle, params: GenerationParams, backend_id: str) -> dict[str, Any]:
    # timeout and retry budget do not change what the model sees, so they stay out of the key
    return {
        "backend_id": backend_id,
        "messages": [[m.kind, m.text] for m in bundle.messages],
        "response_schema": list(bundle.response_schema),
        "params": {"temperature": params.temperature, "max_total_tokens": params.max_total_tokens},
    }


def fingerprint_request(bundle: PromptBundle, params: GenerationParams, backend_id: str) -> str:
    blob = json.dumps(canonical_request(bundle, params, backend_id), sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class FixtureStore:
    """Directory of ``<fingerprint>.json`` files; existing entries are never overwritten."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self._lock = threading.Lock()

    def path(self, fingerprint: str) -> Path:
        return self.directory / f"{fingerprint}.json"

    def load(self, fingerprint: str) -> dict[str, Any] | None:
        p = self.path(fingerprint)
        if not p.exists():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def save(self, fingerprint: str, record: dict[str, Any]) -> bool:
        with self._lock:
            p = self.path(fingerprint)
            if p.exists():
                return False
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = p.with_suffix(".tmp")
            tmp.write_text(json.dumps(record, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
            tmp.replace(p)
            return True


class RecordingBackend:
    def __init__(self, inner: ModelBackend, store: FixtureStore):
        self.inner = inner
        self.store = store
        self.backend_id = inner.backend_id

    def complete(self, bundle: PromptBundle, params: GenerationParams) -> RawCompletion:
        c = self.inner.complete(bundle, params)
        fp = fingerprint_request(bundle, params, self.backend_id)
        self.store.save(fp, {"request": canonical_request(bundle, params, self.backend_id),
                             "response": c.to_dict()})
        return c


class ReplayBackend:
    def __init__(self, store: FixtureStore, backend_id: str):
        self.store = store
        self.backend_id = backend_id

    def complete(self, bundle: PromptBundle, params: GenerationParams) -> RawCompletion:
        fp = fingerprint_request(bundle, params, self.backend_id)
        record = self.store.load(fp)
        if record is None:
            raise FixtureMissError(fp)
        return RawCompletion.from_dict(record["response"])


# -- verdict parsing -----------------------------------------------------------


class ParseFailureReason(str, enum.Enum):
    NOT_JSON = "NotJson"
    MISSING_FIELD = "MissingField"
    BAD_CONFIDENCE = "BadConfidence"
    BAD_DECISION = "BadDecision"


@dataclass(frozen=True)
class ParseFailure:
    reason: ParseFailureReason
    raw: str
    detail: str = ""


DEFAULT_DECISION_SYNONYMS: dict[str, int] = {
    "breakdown": 1,
    "possible breakdown": 1,
    "possible-breakdown": 1,
    "non-breakdown": 0,
    "non breakdown": 0,
    "nonbreakdown": 0,
    "no breakdown": 0,
    "no-breakdown": 0,
    "not a breakdown": 0,
}


def _find_json_object(text: str) -> dict | None:
    try:
        obj = json.loads(text)
        return obj if isinstance(obj, dict) else None
    except json.JSONDecodeError:
        pass
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(obj, dict):
            return obj
        pos = text.find("{", pos + 1)
    return None


def _coerce_confidence(value: Any) -> tuple[float, str | None] | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, str):
        s = value.strip().rstrip("%").strip()
        try:
            value = float(s)
        except ValueError:
            return None
    if not isinstance(value, (int, float)) or not math.isfinite(value):
        return None
    if 0 <= value <= 1:
        return float(value), None
    if 1 < value <= 100:
        return value / 100, f"confidence_percentage:{value!r}->{value / 100!r}"
    return None


def parse_verdict(
    c: RawCompletion | str,
    synonyms: Mapping[str, int] = DEFAULT_DECISION_SYNONYMS,
) -> MonitorVerdict | ParseFailure:
    """Map a JSON answer onto a verdict, or describe why it cannot be mapped."""
    raw = c.text if isinstance(c, RawCompletion) else c
    obj = _find_json_object(raw)
    if obj is None:
        return ParseFailure(ParseFailureReason.NOT_JSON, raw)
    missing = [f for f in RESPONSE_SCHEMA if f not in obj]
    if missing:
        return ParseFailure(ParseFailureReason.MISSING_FIELD, raw, ", ".join(missing))
    decision = synonyms.get(str(obj["decision"]).strip().lower())
    if decision is None:
        return ParseFailure(ParseFailureReason.BAD_DECISION, raw, repr(obj["decision"]))
    coerced = _coerce_confidence(obj["confidence"])
    if coerced is None:
        return ParseFailure(ParseFailureReason.BAD_CONFIDENCE, raw, repr(obj["confidence"]))
    confidence, note = coerced
    justification = obj["justification"]
    justification = "" if justification is None else str(justification)
    return MonitorVerdict(decision, confidence, justification, raw, (note,) if note else ())


def serialize_verdict(v: MonitorVerdict) -> str:
    """Render a verdict as the JSON answer a model is asked to produce."""
    return json.dumps({
        "justification": v.justification,
        "decision": DECISION_WORDS[v.label],
        "confidence": v.confidence,
    }, ensure_ascii=False)


def judge_bundle(raw: str, config: PromptConfig | None = None) -> PromptBundle:
    config = config or PromptConfig()
    return make_bundle([
        Segment("instruction", load_template("judge", config.instruction_language).substitute()),
        Segment("context", f"Answer to interpret:\n{raw}"),
        Segment("response_format", response_instruction(config)),
    ], config, RESPONSE_SCHEMA)


def judge_recover_with_usage(
    judge: ModelBackend,
    failure: ParseFailure,
    params: GenerationParams,
    config: PromptConfig | None = None,
) -> tuple[MonitorVerdict, RawCompletion]:
    """Like :func:`judge_recover` but also returns the judge's completion for cost accounting."""
    if not failure.raw.strip():
        raise ContractError("cannot recover a verdict from empty output")
    completion = complete(judge, judge_bundle(failure.raw, config), params)
    parsed = parse_verdict(completion)
    if isinstance(parsed, ParseFailure):
        raise UnrecoverableOutputError(
            f"judge {judge.backend_id} output is also unparseable ({parsed.reason.value})", failure.raw)
    verdict = MonitorVerdict(parsed.label, parsed.confidence, parsed.justification, failure.raw,
                             parsed.notes + ("judge_recovered", f"judge:{judge.backend_id}"))
    return verdict, completion


def judge_recover(
    judge: ModelBackend,
    failure: ParseFailure,
    params: GenerationParams,
    config: PromptConfig | None = None,
) -> MonitorVerdict:
    """Have ``judge`` restate malformed monitor output in the response schema.

    The returned verdict keeps the monitor's original text in ``raw`` and
    carries a ``judge_recovered`` note.
    """
    return judge_recover_with_usage(judge, failure, params, config)[0]
