"""Evaluation metrics: accuracy, per-class F1, calibration MSE and threshold sweeps."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence

import numpy as np

from .core import BinaryLabel, MonitorVerdict
from .errors import ContractError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with Breakdown as the positive class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


class Scores(NamedTuple):
    accuracy: float
    f1_breakdown: float | None
    f1_nonbreakdown: float | None


@dataclass(frozen=True)
class CalibrationPair:
    predicted: float
    reference: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.predicted <= 1.0 and 0.0 <= self.reference <= 1.0):
            raise ContractError("calibration values must lie in [0, 1]")


class MSE(NamedTuple):
    mse: float
    mse_x100: float


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    safety: float
    escalation_rate: float

    def to_dict(self) -> dict[str, float]:
        return {"t": self.threshold, "safety": self.safety, "escalation_rate": self.escalation_rate}


def _as_int_array(labels: Sequence[BinaryLabel | int]) -> np.ndarray:
    return np.fromiter((int(x) for x in labels), dtype=np.int8, count=len(labels))


def confusion(predictions: Sequence[BinaryLabel | int], gold: Sequence[BinaryLabel | int]) -> ConfusionMatrix:
    if len(predictions) != len(gold):
        raise ContractError(f"{len(predictions)} predictions vs {len(gold)} gold labels")
    if not predictions:
        raise ContractError("confusion needs at least one pair")
    p = _as_int_array(predictions).astype(bool)
    g = _as_int_array(gold).astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(p & g)),
        fp=int(np.sum(p & ~g)),
        fn=int(np.sum(~p & g)),
        tn=int(np.sum(~p & ~g)),
    )


def _f1(hits: int, misses: int) -> float | None:
    denom = 2 * hits + misses
    return None if denom == 0 else 2 * hits / denom


def scores(m: ConfusionMatrix) -> Scores:
    """Accuracy and per-class F1; an F1 with a zero denominator is ``None``."""
    if m.total < 1:
        raise ContractError("empty confusion matrix")
    return Scores(
        accuracy=(m.tp + m.tn) / m.total,
        f1_breakdown=_f1(m.tp, m.fp + m.fn),
        f1_nonbreakdown=_f1(m.tn, m.fn + m.fp),
    )


def calibration_mse(pairs: Sequence[CalibrationPair]) -> MSE:
    """Mean squared gap between predicted breakdown probability and annotator share."""
    if not pairs:
        raise ContractError("calibration MSE needs at least one pair")
    pred = np.array([x.predicted for x in pairs], dtype=np.float64)
    ref = np.array([x.reference for x in pairs], dtype=np.float64)
    mse = float(np.mean((pred - ref) ** 2))
    return MSE(mse, mse * 100)


def escalation_mask(labels: np.ndarray, confidences: np.ndarray, threshold: float) -> np.ndarray:
    # same predicate as escalation.decide: accept iff label 0 and confidence >= T
    return ~((labels == 0) & (confidences >= threshold))


def sensitivity_sweep(
    verdicts: Sequence[MonitorVerdict],
    gold: Sequence[BinaryLabel | int],
    thresholds: Sequence[float],
) -> list[SweepPoint]:
    """Safety (breakdown recall of the escalated set) and escalation rate per threshold."""
    if len(verdicts) != len(gold):
        raise ContractError(f"{len(verdicts)} verdicts vs {len(gold)} gold labels")
    if not verdicts:
        raise ContractError("sweep needs at least one verdict")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise ContractError("thresholds must be sorted ascending")
    labels = np.array([v.label for v in verdicts], dtype=np.int8)
    conf = np.array([v.confidence for v in verdicts], dtype=np.float64)
    g = _as_int_array(gold).astype(bool)
    n_breakdowns = int(g.sum())
    points = []
    for t in thresholds:
        esc = escalation_mask(labels, conf, t)
        safety = 1.0 if n_breakdowns == 0 else int(np.sum(esc & g)) / n_breakdowns
        points.append(SweepPoint(float(t), safety, int(esc.sum()) / len(verdicts)))
    return points


def default_thresholds(step: float = 0.05) -> list[float]:
    n = round(1 / step)
    return [round(i * step, 10) for i in range(n + 1)]


@dataclass(frozen=True)
class TurnResult:
    """One evaluated unit: the monitor verdict (``None`` if it failed) and the gold label."""

    verdict: MonitorVerdict | None
    gold: BinaryLabel
    dialogue_id: str = ""
    turn_index: int = 0
    error: str | None = None


@dataclass(frozen=True)
class MetricsReport:
    n: int
    confusion: ConfusionMatrix
    accuracy: float
    f1_b: float | None
    f1_nb: float | None
    mse: float | None
    mse_x100: float | None
    judge_recovery_rate: float
    sweep: tuple[SweepPoint, ...] = ()
    excluded: int = 0
    header: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "header": self.header,
            "accuracy": self.accuracy,
            "f1_b": self.f1_b,
            "f1_nb": self.f1_nb,
            "mse": self.mse,
            "mse_x100": self.mse_x100,
            "n": self.n,
            "excluded": self.excluded,
            "judge_recovery_rate": self.judge_recovery_rate,
            "confusion": {"tp": self.confusion.tp, "fp": self.confusion.fp,
                          "fn": self.confusion.fn, "tn": self.confusion.tn},
            "sweep": [p.to_dict() for p in self.sweep],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate_run(
    results: Iterable[TurnResult | tuple[MonitorVerdict | None, BinaryLabel]],
    thresholds: Sequence[float] | None = None,
    header: dict[str, Any] | None = None,
) -> MetricsReport:
    """Aggregate per-turn verdicts into a report.

    Turns without a verdict are excluded and counted.  Calibration MSE compares
    each verdict's breakdown probability with the gold label's annotator share
    and is ``None`` when no gold label has a share (conversation-level data).
    """
    rows = [r if isinstance(r, TurnResult) else TurnResult(*r) for r in results]
    if not rows:
        raise ContractError("evaluate_run needs a non-empty result stream")
    kept = [r for r in rows if r.verdict is not None]
    if not kept:
        raise ContractError("every turn failed; nothing to evaluate")
    verdicts = [r.verdict for r in kept]
    gold = [r.gold for r in kept]
    m = confusion([v.label for v in verdicts], gold)
    s = scores(m)
    pairs = [CalibrationPair(v.breakdown_probability, float(g.source_fraction))
             for v, g in zip(verdicts, gold) if g.source_fraction is not None]
    cal = calibration_mse(pairs) if pairs else None
    sweep = tuple(sensitivity_sweep(verdicts, gold, thresholds)) if thresholds else ()
    return MetricsReport(
        n=len(kept),
        confusion=m,
        accuracy=s.accuracy,
        f1_b=s.f1_breakdown,
        f1_nb=s.f1_nonbreakdown,
        mse=None if cal is None else cal.mse,
        mse_x100=None if cal is None else cal.mse_x100,
        judge_recovery_rate=sum(v.judge_recovered for v in verdicts) / len(verdicts),
        sweep=sweep,
        excluded=len(rows) - len(kept),
        header=dict(header or {}),
    )


def sweep_csv(points: Iterable[SweepPoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "safety", "escalation_rate"])
    for p in points:
        w.writerow([repr(p.threshold), repr(p.safety), repr(p.escalation_rate)])
    return buf.getvalue()
