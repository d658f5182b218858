"""Backend wiring configuration shared by the gateway and the CLI.

A config file (JSON or TOML) looks like::

    {
      "fixture_mode": "replay",
      "fixture_dir": "fixtures",
      "policy": {"threshold": 0.5, "alert_threshold": 0.95, "alert_sink": null},
      "params": {"temperature": 0, "max_total_tokens": 2048},
      "pricing": "pricing.json",
      "assistant": {"kind": "remote", "model": "meta-llama/llama-3.3-70b-instruct",
                    "backend_id": "llama-3.1-70b"},
      "monitor":   {"kind": "remote", "model": "aghassel/dialogue_disruption_monitor",
                    "backend_id": "llama-3.1-8b"},
      "superior":  {"kind": "remote", "model": "meta-llama/llama-3.1-405b-instruct",
                    "backend_id": "llama-3.1-405b"},
      "judge":     {"kind": "remote", "model": "meta-llama/llama-3.3-70b-instruct"}
    }

``backend_id`` is what fixtures are keyed on and what pricing is looked up by.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .backends import (
    API_KEY_ENV,
    FixtureStore,
    GenerationParams,
    ModelBackend,
    RecordingBackend,
    RemoteBackend,
    ReplayBackend,
    ScriptedBackend,
)
from .costing import PricingTable, tomllib
from .errors import ConfigError
from .escalation import Disposition, EscalationPolicy


class FixtureMode(str, enum.Enum):
    LIVE = "live"
    RECORD = "record"
    REPLAY = "replay"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "remote"  # remote | scripted
    model: str = ""
    backend_id: str | None = None
    base_url: str | None = None
    reply: str | None = None  # scripted backends only
    max_in_flight: int = 4

    @property
    def id(self) -> str:
        return self.backend_id or self.model or "scripted"

    @classmethod
    def from_mapping(cls, d: Mapping[str, Any]) -> BackendConfig:
        known = {"kind", "model", "backend_id", "base_url", "reply", "max_in_flight"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown backend keys: {sorted(unknown)}")
        cfg = cls(**d)
        if cfg.kind not in ("remote", "scripted"):
            raise ConfigError(f"unknown backend kind {cfg.kind!r}")
        if cfg.kind == "remote" and not cfg.model:
            raise ConfigError("remote backends need a model")
        if cfg.kind == "scripted" and cfg.reply is None:
            raise ConfigError("scripted backends need a reply")
        return cfg


@dataclass(frozen=True)
class GatewayConfig:
    monitor: BackendConfig
    assistant: BackendConfig | None = None
    superior: BackendConfig | None = None
    judge: BackendConfig | None = None
    policy: EscalationPolicy = field(default_factory=EscalationPolicy)
    params: GenerationParams = field(default_factory=GenerationParams)
    pricing_path: Path | None = None
    fixture_mode: FixtureMode = FixtureMode.LIVE
    fixture_dir: Path | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    alert_retry_budget: int = 2
    dead_letter_path: Path = Path("alerts.deadletter.jsonl")

    def backends(self) -> dict[str, BackendConfig]:
        named = {"monitor": self.monitor, "assistant": self.assistant,
                 "superior": self.superior, "judge": self.judge}
        return {k: v for k, v in named.items() if v is not None}

    def validate(self, env: Mapping[str, str] | None = None) -> None:
        env = os.environ if env is None else env
        if self.fixture_mode is not FixtureMode.LIVE and self.fixture_dir is None:
            raise ConfigError(f"{self.fixture_mode.value} mode needs a fixture_dir")
        needs_remote = any(b.kind == "remote" for b in self.backends().values())
        if self.fixture_mode is not FixtureMode.REPLAY and needs_remote and not env.get(API_KEY_ENV):
            raise ConfigError(f"live backends need credentials in ${API_KEY_ENV}")

    def pricing(self) -> PricingTable | None:
        return PricingTable.load(self.pricing_path) if self.pricing_path else None


def _policy(d: Mapping[str, Any]) -> EscalationPolicy:
    d = dict(d)
    if "on_unrecoverable" in d:
        d["on_unrecoverable"] = Disposition(d["on_unrecoverable"])
    return EscalationPolicy(**d)


def config_from_mapping(data: Mapping[str, Any], base_dir: Path = Path(".")) -> GatewayConfig:
    def path(key: str) -> Path | None:
        v = data.get(key)
        return None if v is None else base_dir / v

    def backend(key: str) -> BackendConfig | None:
        v = data.get(key)
        return None if v is None else BackendConfig.from_mapping(v)

    if "monitor" not in data:
        raise ConfigError("config needs a monitor backend")
    try:
        return GatewayConfig(
            monitor=backend("monitor"),
            assistant=backend("assistant"),
            superior=backend("superior"),
            judge=backend("judge"),
            policy=_policy(data.get("policy", {})),
            params=GenerationParams(**data.get("params", {})),
            pricing_path=path("pricing"),
            fixture_mode=FixtureMode(data.get("fixture_mode", "live")),
            fixture_dir=path("fixture_dir"),
            host=data.get("host", "127.0.0.1"),
            port=int(data.get("port", 8080)),
            alert_retry_budget=int(data.get("alert_retry_budget", 2)),
            dead_letter_path=path("dead_letter_path") or Path("alerts.deadletter.jsonl"),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> GatewayConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    return config_from_mapping(data, path.parent)


def build_backend(cfg: BackendConfig, mode: FixtureMode = FixtureMode.LIVE,
                  fixture_dir: Path | None = None) -> ModelBackend:
    """Instantiate a backend and wrap it for recording or replay as the mode requires."""
    if mode is FixtureMode.REPLAY:
        if fixture_dir is None:
            raise ConfigError("replay mode needs a fixture_dir")
        return ReplayBackend(FixtureStore(fixture_dir), cfg.id)
    if cfg.kind == "scripted":
        inner: ModelBackend = ScriptedBackend(cfg.reply, cfg.id)
    else:
        inner = RemoteBackend(cfg.model, base_url=cfg.base_url, backend_id=cfg.id,
                              max_in_flight=cfg.max_in_flight)
    if mode is FixtureMode.RECORD:
        if fixture_dir is None:
            raise ConfigError("record mode needs a fixture_dir")
        return RecordingBackend(inner, FixtureStore(fixture_dir))
    return inner


def build_backends(cfg: GatewayConfig) -> dict[str, ModelBackend]:
    return {name: build_backend(b, cfg.fixture_mode, cfg.fixture_dir) for name, b in cfg.backends().items()}
