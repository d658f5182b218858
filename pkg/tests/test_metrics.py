from __future__ import annotations

import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from breakguard.core import BinaryLabel, MonitorVerdict
from breakguard.errors import ContractError
from breakguard.metrics import (
    CalibrationPair,
    ConfusionMatrix,
    calibration_mse,
    confusion,
    default_thresholds,
    escalation_mask,
    evaluate_run,
    scores,
    sensitivity_sweep,
    sweep_csv,
)

from oracles import brute_mse, brute_scores, brute_sweep_point

WORKED = [MonitorVerdict(0, 0.9), MonitorVerdict(0, 0.6), MonitorVerdict(1, 0.8)]
WORKED_GOLD = [0, 1, 1]


@pytest.mark.parametrize("preds, gold, expected", [
    ([1, 0, 1], [1, 0, 1], ConfusionMatrix(tp=2, tn=1)),
    ([1, 1, 0, 0], [1, 0, 1, 0], ConfusionMatrix(1, 1, 1, 1)),
    ([0], [1], ConfusionMatrix(fn=1)),
])
def test_confusion_examples(preds, gold, expected):
    assert confusion(preds, gold) == expected


def test_confusion_contract():
    with pytest.raises(ContractError):
        confusion([1], [1, 0])
    with pytest.raises(ContractError):
        confusion([], [])


def test_scores_examples():
    assert scores(ConfusionMatrix(2, 1, 1, 6)).f1_breakdown == pytest.approx(4 / 6)
    assert scores(ConfusionMatrix(tp=3, tn=4)) == (1.0, 1.0, 1.0)
    s = scores(ConfusionMatrix(tn=5))
    assert s.accuracy == 1.0 and s.f1_breakdown is None and s.f1_nonbreakdown == 1.0


@pytest.mark.parametrize("pairs, mse", [
    ([(0.3, 0.3), (0.9, 0.9)], 0.0),
    ([(0.8, 0.6), (0.4, 0.5)], 0.025),
    ([(1.0, 0.0)], 1.0),
])
def test_mse_examples(pairs, mse):
    out = calibration_mse([CalibrationPair(*p) for p in pairs])
    assert out.mse == pytest.approx(mse, abs=1e-15)
    assert out.mse_x100 == pytest.approx(100 * mse, abs=1e-13)


def test_mse_contract():
    with pytest.raises(ContractError):
        calibration_mse([])
    with pytest.raises(ContractError):
        CalibrationPair(1.2, 0.5)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30), st.randoms())
def test_mse_permutation_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    a = calibration_mse([CalibrationPair(*p) for p in pairs]).mse
    b = calibration_mse([CalibrationPair(*p) for p in shuffled]).mse
    assert a == pytest.approx(b, rel=1e-12, abs=1e-15)


def test_oracle_agreement_on_random_runs():
    rng = random.Random(1234)
    for _ in range(300):
        n = rng.randint(1, 50)
        preds = [rng.randint(0, 1) for _ in range(n)]
        gold = [rng.randint(0, 1) for _ in range(n)]
        s = scores(confusion(preds, gold))
        for got, want in zip(s, brute_scores(preds, gold)):
            assert (got is None) == (want is None)
            if want is not None:
                assert got == pytest.approx(want, rel=1e-12, abs=0)


# -- sweep ------------------------------------------------------------------------------


def test_worked_sweep_example():
    lo, hi = sensitivity_sweep(WORKED, WORKED_GOLD, [0.5, 0.7])
    assert (lo.safety, lo.escalation_rate) == (0.5, pytest.approx(1 / 3))
    assert (hi.safety, hi.escalation_rate) == (1.0, pytest.approx(2 / 3))


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0.01, 1)), min_size=1, max_size=20))
def test_zero_threshold_escalates_only_breakdown_predictions(pairs):
    labels = np.array([p[0] for p in pairs])
    conf = np.array([p[1] for p in pairs])
    assert list(escalation_mask(labels, conf, 0.0)) == [lab == 1 for lab in labels]


verdict_sets = st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=40)


@given(verdict_sets)
def test_sweep_monotone_and_bounded_below_by_detection(rows):
    vs = [MonitorVerdict(lab, c) for lab, c, _ in rows]
    gold = [g for *_, g in rows]
    points = sensitivity_sweep(vs, gold, default_thresholds())
    for a, b in zip(points, points[1:]):
        assert a.safety <= b.safety and a.escalation_rate <= b.escalation_rate
    n_b = sum(gold)
    detected = sum(1 for v, g in zip(vs, gold) if g == 1 and v.label == 1)
    floor = 1.0 if n_b == 0 else detected / n_b
    assert all(p.safety >= floor - 1e-15 for p in points)
    for p in points:
        assert (p.safety, p.escalation_rate) == pytest.approx(
            brute_sweep_point([(v.label, v.confidence) for v in vs], gold, p.threshold))


def test_sweep_contract():
    with pytest.raises(ContractError):
        sensitivity_sweep(WORKED, [0, 1], [0.5])
    with pytest.raises(ContractError):
        sensitivity_sweep(WORKED, WORKED_GOLD, [0.7, 0.5])


def test_default_thresholds_grid():
    grid = default_thresholds()
    assert len(grid) == 21 and grid[0] == 0.0 and grid[-1] == 1.0 and grid[7] == 0.35


def test_sweep_csv():
    text = sweep_csv(sensitivity_sweep(WORKED, WORKED_GOLD, [0.5, 0.7]))
    assert text.splitlines()[0] == "t,safety,escalation_rate"
    assert text.splitlines()[2].startswith("0.7,1.0,0.666")


# -- evaluate_run ---------------------------------------------------------------------


def _gold(b, total):
    p = Fraction(b, total)
    return BinaryLabel(int(p >= Fraction(1, 2)), p)


def test_perfect_run():
    golds = [_gold(4, 5), _gold(1, 5), _gold(3, 5)]
    vs = [MonitorVerdict(g.value, float(g.source_fraction if g.value else 1 - g.source_fraction))
          for g in golds]
    r = evaluate_run(list(zip(vs, golds)))
    assert r.accuracy == 1.0 and r.mse == pytest.approx(0, abs=1e-15) and r.n == 3


def test_run_embeds_sweep_points():
    r = evaluate_run(list(zip(WORKED, map(BinaryLabel, WORKED_GOLD))), thresholds=[0.5, 0.7])
    assert [p.to_dict()["t"] for p in r.sweep] == [0.5, 0.7]
    assert r.sweep[1].safety == 1.0
    assert r.mse is None  # gold labels carry no annotator share


def test_run_excludes_failures_and_counts_recovery():
    rows = [(MonitorVerdict(1, 0.9, notes=("judge_recovered",)), BinaryLabel(1)),
            (None, BinaryLabel(0)),
            (MonitorVerdict(0, 0.9), BinaryLabel(0))]
    r = evaluate_run(rows)
    assert (r.n, r.excluded, r.judge_recovery_rate) == (2, 1, 0.5)
    d = r.to_dict()
    assert {"accuracy", "f1_b", "f1_nb", "mse", "mse_x100", "n", "judge_recovery_rate", "sweep"} <= set(d)


def test_empty_run_is_an_error():
    with pytest.raises(ContractError):
        evaluate_run([])
