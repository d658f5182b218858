from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from breakguard.core import (
    AnnotationSet,
    BinaryLabel,
    Dialogue,
    Language,
    MonitorVerdict,
    Speaker,
    TaskTurn,
    Turn,
    validate_dialogue,
)

from conftest import turns_from

counts = st.integers(min_value=0, max_value=40)


def test_well_formed_dialogue_has_empty_report():
    d = Dialogue("ok", Language.ENGLISH, turns_from("a", "b", "c", "d"))
    assert validate_dialogue(d).ok
    assert validate_dialogue(d).violations == ()


def test_consecutive_system_turns_reported_at_second_index():
    d = Dialogue("bad", Language.ENGLISH, (
        Turn(1, Speaker.USER, "hi"),
        Turn(2, Speaker.SYSTEM, "hello"),
        Turn(3, Speaker.SYSTEM, "hello again"),
    ))
    (v,) = validate_dialogue(d).violations
    assert (v.rule, v.turn_index) == ("alternation", 3)


def test_zero_total_annotation_reported():
    d = Dialogue("bad", Language.ENGLISH, (
        Turn(1, Speaker.USER, "hi"),
        Turn(2, Speaker.SYSTEM, "hello", AnnotationSet(0, 0, 0)),
    ))
    (v,) = validate_dialogue(d).violations
    assert (v.rule, v.turn_index) == ("annotation_total", 2)


def test_every_violation_is_reported():
    d = Dialogue("worse", Language.ENGLISH, (
        Turn(0, Speaker.USER, "hi", AnnotationSet(1, 0, 0)),
        Turn(0, Speaker.USER, "again"),
        Turn(1, Speaker.SYSTEM, "x", AnnotationSet(-1, 0, 2), TaskTurn(Speaker.SYSTEM, "")),
    ), conversation_label=3)
    rules = [v.rule for v in validate_dialogue(d).violations]
    assert rules == ["index_positive", "annotations_on_system", "index_positive", "index_increasing",
                     "alternation", "annotation_nonnegative", "intent_nonempty", "conversation_label"]


def test_validation_is_pure():
    d = Dialogue("x", Language.ENGLISH, (Turn(1, Speaker.SYSTEM, "a"), Turn(1, Speaker.SYSTEM, "b")))
    assert validate_dialogue(d) == validate_dialogue(d)


@given(counts, counts, counts)
def test_fraction_is_exact_share_of_breakdown_votes(b, pb, nb):
    a = AnnotationSet(b, pb, nb)
    if a.total == 0:
        with pytest.raises(ZeroDivisionError):
            a.fraction
        return
    assert a.fraction == Fraction(b + pb, b + pb + nb)
    assert 0 <= a.fraction <= 1


def test_binary_label_checks_fraction_consistency():
    BinaryLabel(1, Fraction(1, 2))
    BinaryLabel(0, Fraction(49, 100))
    with pytest.raises(ValueError):
        BinaryLabel(0, Fraction(1, 2))
    with pytest.raises(ValueError):
        BinaryLabel(2)
    assert int(BinaryLabel(1)) == 1


@pytest.mark.parametrize("c", [-0.01, 1.01, float("nan"), float("inf")])
def test_verdict_rejects_out_of_range_confidence(c):
    with pytest.raises(ValueError):
        MonitorVerdict(0, c)


def test_breakdown_probability_is_directional():
    assert MonitorVerdict(1, 0.8).breakdown_probability == 0.8
    assert MonitorVerdict(0, 0.8).breakdown_probability == pytest.approx(0.2)
    assert not MonitorVerdict(0, 0.8).judge_recovered
    assert MonitorVerdict(0, 0.8, notes=("judge_recovered",)).judge_recovered


def test_speaker_titles():
    assert Speaker.USER.title == "User"
    assert Speaker.SYSTEM.title == "System"
