"""Batch evaluation: run a monitor over a dataset and score it against gold labels."""

from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .backends import (
    GenerationParams,
    ModelBackend,
    ParseFailure,
    complete,
    judge_recover,
    parse_verdict,
)
from .core import BinaryLabel, Dialogue, Speaker
from .errors import (
    BudgetError,
    FixtureMissError,
    GenerationError,
    TransportError,
    UnrecoverableOutputError,
)
from .ingest import consolidate
from .metrics import MetricsReport, TurnResult, default_thresholds, evaluate_run, sweep_csv
from .prompting import (
    TEMPLATE_VERSION,
    Exemplar,
    PromptBundle,
    PromptConfig,
    Strategy,
    StrategyKind,
    render_conversation_prompt,
    render_prompt,
    select_exemplars,
)

log = logging.getLogger(__name__)

# failures that drop one unit from the metrics rather than abort the run
UNIT_ERRORS = (TransportError, FixtureMissError, UnrecoverableOutputError, BudgetError, GenerationError)


@dataclass(frozen=True)
class EvaluationOptions:
    strategy: Strategy
    seed: int = 0
    # fraction of dialogues to evaluate; None means all
    subsample: float | None = None
    workers: int = 1
    thresholds: Sequence[float] = field(default_factory=default_thresholds)
    conversation_level: bool = False
    params: GenerationParams = field(default_factory=GenerationParams)
    prompt_config: PromptConfig = field(default_factory=PromptConfig)

    def __post_init__(self) -> None:
        if self.subsample is not None and not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


def subsample_dialogues(dialogues: Sequence[Dialogue], fraction: float, seed: int) -> list[Dialogue]:
    """Pick ``ceil(fraction * N)`` dialogues with a seeded RNG, keeping input order."""
    k = math.ceil(fraction * len(dialogues))
    chosen = sorted(random.Random(seed).sample(range(len(dialogues)), k))
    return [dialogues[i] for i in chosen]


@dataclass(frozen=True)
class _Unit:
    dialogue: Dialogue
    turn_index: int  # 0 for a conversation-level unit

    def bundle(self, s: Strategy, exemplars: Sequence[Exemplar], config: PromptConfig) -> PromptBundle:
        if self.turn_index == 0:
            return render_conversation_prompt(self.dialogue, s, exemplars, config)
        pos = next(i for i, t in enumerate(self.dialogue.turns) if t.index == self.turn_index)
        return render_prompt(self.dialogue.turns[:pos], self.dialogue.turns[pos], s, exemplars, config)

    def gold(self):
        if self.turn_index == 0:
            return BinaryLabel(self.dialogue.conversation_label)
        t = next(t for t in self.dialogue.turns if t.index == self.turn_index)
        return consolidate(t.annotations)


def _units(dialogues: Sequence[Dialogue], conversation_level: bool) -> list[_Unit]:
    if conversation_level:
        return [_Unit(d, 0) for d in dialogues]
    return [_Unit(d, t.index) for d in dialogues for t in d.turns
            if t.speaker is Speaker.SYSTEM and t.annotations is not None]


def _evaluate_unit(u: _Unit, monitor: ModelBackend, judge: ModelBackend | None,
                   exemplars: Sequence[Exemplar], opts: EvaluationOptions) -> TurnResult:
    gold = u.gold()
    try:
        bundle = u.bundle(opts.strategy, exemplars, opts.prompt_config)
        parsed = parse_verdict(complete(monitor, bundle, opts.params))
        if isinstance(parsed, ParseFailure):
            if judge is None or not parsed.raw.strip():
                raise UnrecoverableOutputError(f"{parsed.reason.value}: {parsed.detail}", parsed.raw)
            parsed = judge_recover(judge, parsed, opts.params, opts.prompt_config)
    except UNIT_ERRORS as exc:
        log.warning("%s turn %d excluded: %s", u.dialogue.id, u.turn_index, exc)
        return TurnResult(None, gold, u.dialogue.id, u.turn_index, f"{type(exc).__name__}: {exc}")
    return TurnResult(parsed, gold, u.dialogue.id, u.turn_index)


@dataclass(frozen=True)
class EvaluationRun:
    report: MetricsReport
    results: tuple[TurnResult, ...]

    @property
    def fixture_misses(self) -> int:
        return sum(1 for r in self.results if r.error and r.error.startswith("FixtureMissError"))

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path, sweep_path = out / "report.json", out / "sweep.csv"
        report_path.write_text(self.report.to_json(), encoding="utf-8")
        sweep_path.write_text(sweep_csv(self.report.sweep), encoding="utf-8")
        return report_path, sweep_path


def evaluate_dialogues(
    dialogues: Sequence[Dialogue],
    monitor: ModelBackend,
    opts: EvaluationOptions,
    *,
    judge: ModelBackend | None = None,
    pool: Sequence[Exemplar] = (),
) -> EvaluationRun:
    """Score ``monitor`` on every annotated system turn (or every dialogue at conversation level).

    Exemplars are drawn once per run from ``pool`` with ``opts.seed``.  Results
    keep input order whatever ``opts.workers`` is, so the report bytes depend
    only on the inputs and the backend's replies.
    """
    total = len(dialogues)
    if opts.subsample is not None:
        dialogues = subsample_dialogues(dialogues, opts.subsample, opts.seed)
    exemplars = select_exemplars(pool, opts.strategy, opts.seed) if opts.strategy.shots else []
    units = _units(dialogues, opts.conversation_level)

    def run(u: _Unit) -> TurnResult:
        return _evaluate_unit(u, monitor, judge, exemplars, opts)

    if opts.workers == 1:
        results = [run(u) for u in units]
    else:
        with ThreadPoolExecutor(max_workers=opts.workers) as ex:
            results = list(ex.map(run, units))

    if all(r.verdict is None for r in results):
        # nothing to score; surface a replay gap as such rather than as an empty run
        miss = next((r.error for r in results if r.error and r.error.startswith("FixtureMissError")), None)
        if miss is not None:
            raise FixtureMissError(miss.rsplit(" ", 1)[-1])

    header = {
        "strategy": opts.strategy.name,
        "seed": opts.seed,
        "template_version": TEMPLATE_VERSION,
        "level": "conversation" if opts.conversation_level else "utterance",
        "dialogues_total": total,
        "dialogues_evaluated": len(dialogues),
        "subsample": opts.subsample,
        "exemplars": [list(e.key) for e in exemplars],
    }
    if opts.subsample is not None:
        header["subsample_ids"] = [d.id for d in dialogues]
    report = evaluate_run(results, list(opts.thresholds), header)
    return EvaluationRun(report, tuple(results))


def needs_subsample(s: Strategy) -> bool:
    return s.kind in (StrategyKind.AR, StrategyKind.CLAR)
