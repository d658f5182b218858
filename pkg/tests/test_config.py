from __future__ import annotations

import json

import pytest

from breakguard.backends import RecordingBackend, RemoteBackend, ReplayBackend, ScriptedBackend
from breakguard.config import (
    BackendConfig,
    FixtureMode,
    GatewayConfig,
    build_backend,
    config_from_mapping,
    load_config,
)
from breakguard.errors import ConfigError
from breakguard.escalation import Disposition

REMOTE = BackendConfig("remote", "meta-llama/llama-3.1-8b-instruct", "llama-3.1-8b")
SCRIPTED = BackendConfig("scripted", reply="ok", backend_id="s")


def test_replay_needs_fixture_dir():
    with pytest.raises(ConfigError, match="fixture_dir"):
        GatewayConfig(REMOTE, fixture_mode=FixtureMode.REPLAY).validate(env={})


def test_live_needs_credentials(tmp_path):
    with pytest.raises(ConfigError, match="BREAKGUARD_API_KEY"):
        GatewayConfig(REMOTE).validate(env={})
    GatewayConfig(REMOTE).validate(env={"BREAKGUARD_API_KEY": "k"})
    GatewayConfig(SCRIPTED).validate(env={})
    GatewayConfig(REMOTE, fixture_mode=FixtureMode.REPLAY, fixture_dir=tmp_path).validate(env={})


def test_build_backend_by_mode(tmp_path):
    assert isinstance(build_backend(SCRIPTED), ScriptedBackend)
    assert isinstance(build_backend(REMOTE), RemoteBackend)
    rec = build_backend(SCRIPTED, FixtureMode.RECORD, tmp_path)
    assert isinstance(rec, RecordingBackend) and rec.backend_id == "s"
    rep = build_backend(REMOTE, FixtureMode.REPLAY, tmp_path)
    assert isinstance(rep, ReplayBackend) and rep.backend_id == "llama-3.1-8b"


@pytest.mark.parametrize("d", [{"kind": "local", "model": "x"}, {"kind": "remote"},
                               {"kind": "scripted"}, {"kind": "remote", "model": "x", "colour": 1}])
def test_bad_backend_configs(d):
    with pytest.raises(ConfigError):
        BackendConfig.from_mapping(d)


def test_load_json_and_toml(tmp_path):
    data = {"fixture_mode": "replay", "fixture_dir": "fx",
            "policy": {"threshold": 0.6, "on_unrecoverable": "accept"},
            "params": {"max_total_tokens": 1024},
            "monitor": {"kind": "scripted", "reply": "{}", "backend_id": "m"}}
    (tmp_path / "c.json").write_text(json.dumps(data))
    (tmp_path / "c.toml").write_text(
        'fixture_mode = "replay"\nfixture_dir = "fx"\n'
        '[policy]\nthreshold = 0.6\non_unrecoverable = "accept"\n'
        '[params]\nmax_total_tokens = 1024\n'
        '[monitor]\nkind = "scripted"\nreply = "{}"\nbackend_id = "m"\n')
    a, b = load_config(tmp_path / "c.json"), load_config(tmp_path / "c.toml")
    assert a == b
    assert a.fixture_dir == tmp_path / "fx" and a.policy.on_unrecoverable is Disposition.ACCEPT
    assert a.params.max_total_tokens == 1024


def test_config_needs_monitor():
    with pytest.raises(ConfigError):
        config_from_mapping({})
    with pytest.raises(ConfigError):
        config_from_mapping({"monitor": {"kind": "scripted", "reply": "x"}, "policy": {"threshold": 2}})
