from __future__ import annotations

from pathlib import Path

import pytest

from breakguard.backends import ScriptedBackend, serialize_verdict
from breakguard.core import Dialogue, Language, MonitorVerdict, Speaker, Turn

DATA = Path(__file__).parent / "data"
GOLDENS = Path(__file__).parent / "goldens"


def turns_from(*texts: str, first: Speaker = Speaker.SYSTEM) -> tuple[Turn, ...]:
    """Alternating turns starting with ``first``, indexed from 1."""
    other = {Speaker.SYSTEM: Speaker.USER, Speaker.USER: Speaker.SYSTEM}
    out, speaker = [], first
    for i, text in enumerate(texts, 1):
        out.append(Turn(i, speaker, text))
        speaker = other[speaker]
    return tuple(out)


SHOPPING = turns_from(
    "It's nice to go shopping alone.",
    "I agree. That's nice.",
    "Shopping takes time.",
    "Window shopping is also fun.",
    "It's fun to go shopping with somebody.",
)


def shopping_dialogue() -> Dialogue:
    return Dialogue("shopping", Language.ENGLISH, SHOPPING)


def monitor_says(label: int, confidence: float, justification: str = "", backend_id: str = "monitor"):
    return ScriptedBackend(serialize_verdict(MonitorVerdict(label, confidence, justification)), backend_id)


@pytest.fixture
def data_dir() -> Path:
    return DATA


# -- acceptance summary ------------------------------------------------------------

_criteria: dict[int, tuple[str, bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    ok = _criteria.get(number, (title, True))[1] and not report.failed
    if report.when == "call" or report.failed:
        _criteria[number] = (title, ok)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result().criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  C{number}  {title}")
