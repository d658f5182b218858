"""Domain types: dialogues, annotation counts, binary labels and monitor verdicts.

All types are frozen dataclasses.  Constructors only enforce what is needed to
keep a value meaningful (e.g. a label is 0 or 1); structural rules that span
several turns are checked by :func:`validate_dialogue`, which reports instead
of raising so malformed data can still be inspected.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

HALF = Fraction(1, 2)


class Speaker(str, enum.Enum):
    USER = "user"
    SYSTEM = "system"

    @property
    def title(self) -> str:
        return "User" if self is Speaker.USER else "System"


class Language(str, enum.Enum):
    ENGLISH = "en"
    JAPANESE = "ja"
    ABSTRACT = "abstract"


@dataclass(frozen=True)
class AnnotationSet:
    """Per-class annotator counts for one system utterance."""

    breakdown: int
    possible_breakdown: int
    non_breakdown: int

    @property
    def total(self) -> int:
        return self.breakdown + self.possible_breakdown + self.non_breakdown

    @property
    def fraction(self) -> Fraction:
        """Exact share of annotators choosing B or PB."""
        if self.total < 1:
            raise ZeroDivisionError("annotation set has no annotations")
        return Fraction(self.breakdown + self.possible_breakdown, self.total)


@dataclass(frozen=True)
class TaskTurn:
    """An intent/entity encoded turn from a task-oriented corpus."""

    speaker: Speaker
    intent: str
    entities: tuple[str, ...] = ()


@dataclass(frozen=True)
class Turn:
    index: int
    speaker: Speaker
    text: str
    annotations: AnnotationSet | None = None
    task: TaskTurn | None = None


@dataclass(frozen=True)
class Dialogue:
    id: str
    language: Language
    turns: tuple[Turn, ...]
    conversation_label: int | None = None

    @property
    def system_turns(self) -> tuple[Turn, ...]:
        return tuple(t for t in self.turns if t.speaker is Speaker.SYSTEM)


@dataclass(frozen=True)
class BinaryLabel:
    value: int
    source_fraction: Fraction | None = None

    def __post_init__(self) -> None:
        if self.value not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.value!r}")
        if self.source_fraction is not None:
            if not 0 <= self.source_fraction <= 1:
                raise ValueError("source_fraction must lie in [0, 1]")
            if (self.value == 1) != (self.source_fraction >= HALF):
                raise ValueError("label disagrees with its source fraction")

    def __int__(self) -> int:
        return self.value


@dataclass(frozen=True)
class MonitorVerdict:
    """Parsed per-turn monitor output: label, confidence in that label, justification.

    ``notes`` is the audit trail of any normalization applied while parsing
    (percentage coercion, judge recovery).
    """

    label: int
    confidence: float
    justification: str = ""
    raw: str = ""
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"verdict label must be 0 or 1, got {self.label!r}")
        if not (isinstance(self.confidence, (int, float)) and math.isfinite(self.confidence)):
            raise ValueError(f"confidence must be a finite number, got {self.confidence!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")

    @property
    def judge_recovered(self) -> bool:
        return "judge_recovered" in self.notes

    @property
    def breakdown_probability(self) -> float:
        # confidence is certainty in the predicted label; flip it onto the Breakdown class
        return self.confidence if self.label == 1 else 1.0 - self.confidence


@dataclass(frozen=True)
class Violation:
    turn_index: int | None
    rule: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    dialogue_id: str
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_dialogue(d: Dialogue) -> ValidationReport:
    """Check every Dialogue/Turn invariant and report each violation."""
    found: list[Violation] = []
    prev: Turn | None = None
    for t in d.turns:
        if t.index < 1:
            found.append(Violation(t.index, "index_positive", f"turn index {t.index} is below 1"))
        if prev is not None:
            if t.index <= prev.index:
                found.append(Violation(
                    t.index, "index_increasing",
                    f"turn index {t.index} does not follow {prev.index}"))
            if t.speaker is prev.speaker:
                found.append(Violation(
                    t.index, "alternation",
                    f"two consecutive {t.speaker.value} turns ({prev.index}, {t.index})"))
        a = t.annotations
        if a is not None:
            if t.speaker is not Speaker.SYSTEM:
                found.append(Violation(t.index, "annotations_on_system",
                                       "annotations attached to a user turn"))
            if min(a.breakdown, a.possible_breakdown, a.non_breakdown) < 0:
                found.append(Violation(t.index, "annotation_nonnegative",
                                       "annotation counts must be non-negative"))
            elif a.total < 1:
                found.append(Violation(t.index, "annotation_total",
                                       "annotation total must be >= 1"))
        if t.task is not None and not t.task.intent:
            found.append(Violation(t.index, "intent_nonempty", "task turn has an empty intent"))
        prev = t
    if d.conversation_label is not None and d.conversation_label not in (0, 1):
        found.append(Violation(None, "conversation_label",
                               f"conversation label {d.conversation_label!r} is not 0 or 1"))
    return ValidationReport(d.id, tuple(found))
