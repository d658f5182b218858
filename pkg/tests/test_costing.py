from __future__ import annotations

import json
from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from breakguard.core import MonitorVerdict
from breakguard.costing import (
    BEDROCK_LLAMA_PRICING as P,
    LLAMA_8B,
    LLAMA_70B,
    LLAMA_405B,
    CostScenario,
    PricingTable,
    worked_example_report,
    dialogue_token_budget,
    measured_cost,
    present,
    render_breakdown,
    savings,
    scenario_cost,
    scenario_from_mapping,
)
from breakguard.errors import ContractError, PricingError
from breakguard.escalation import ActionKind, StageUsage, TurnAction, TurnOutcome

from oracles import simulated_budget


@pytest.mark.parametrize("n, tpm, budget", [(15, 40, 9600), (1, 40, 80), (3, 10, 120)])
def test_budget_examples(n, tpm, budget):
    assert dialogue_token_budget(n, tpm) == budget == simulated_budget(n, tpm)


@given(st.integers(1, 2000), st.integers(1, 200))
def test_budget_closed_form(n, tpm):
    assert dialogue_token_budget(n, tpm) == simulated_budget(n, tpm)


def test_budget_contract():
    with pytest.raises(ContractError):
        dialogue_token_budget(0, 40)


def test_baselines():
    assert present(scenario_cost(CostScenario(15, LLAMA_405B), P).total) == Decimal("0.02304")
    always_70 = scenario_cost(CostScenario(15, LLAMA_70B), P).total
    assert always_70 == Decimal("0.006912") and present(always_70) == Decimal("0.00691")


def test_tiered_scenario_items():
    b = scenario_cost(CostScenario(15, LLAMA_70B, monitor_model=LLAMA_8B, escalation_model=LLAMA_405B,
                                   escalation_fraction=Decimal("0.1")), P)
    assert b.items == {"assistant": Decimal("0.0062208"), "escalation": Decimal("0.002304"),
                       "monitor": Decimal("0.002112")}
    assert b.total == sum(b.items.values()) == Decimal("0.0106368")
    assert present(b.dialogue) == Decimal("0.00852") and present(b.get("monitor")) == Decimal("0.00211")
    assert abs(present(b.total) - Decimal("0.01063")) <= Decimal("0.00001")


def test_double_billing_flag():
    s = dict(turns=15, assistant_model=LLAMA_70B, escalation_model=LLAMA_405B, escalation_fraction=Decimal("0.1"))
    once = scenario_cost(CostScenario(**s), P)
    twice = scenario_cost(CostScenario(**s, double_bill=True), P)
    assert twice.total - once.total == Decimal("0.1") * Decimal("0.006912")


@given(st.integers(1, 60), st.integers(1, 100), st.decimals(0, 1, places=3), st.integers(1, 5))
def test_cost_linear_in_rates(n, tpm, f, k):
    s = CostScenario(n, "a", tpm, "m", "e" if f > 0 else None, f)
    base = PricingTable.from_mapping({m: {"input_per_1k": "0.001", "output_per_1k": "0.002"} for m in "ame"})
    scaled = PricingTable.from_mapping({m: {"input_per_1k": str(Decimal("0.001") * k),
                                            "output_per_1k": str(Decimal("0.002") * k)} for m in "ame"})
    a, b = scenario_cost(s, base), scenario_cost(s, scaled)
    assert b.total == k * a.total
    assert a.total == sum(a.items.values())


def test_unknown_model():
    with pytest.raises(PricingError):
        scenario_cost(CostScenario(3, "gpt-x"), P)


@pytest.mark.parametrize("kwargs", [dict(turns=0, assistant_model="a"),
                                    dict(turns=2, assistant_model="a", escalation_fraction=Decimal("0.1")),
                                    dict(turns=2, assistant_model="a", escalation_model="e"),
                                    dict(turns=2, assistant_model="a", escalation_model="e",
                                         escalation_fraction=Decimal("1.5"))])
def test_scenario_invariants(kwargs):
    with pytest.raises(ContractError):
        CostScenario(**kwargs)


def test_savings():
    assert round(savings(Decimal("0.02304"), Decimal("0.01063")), 4) == Decimal("0.5386")
    assert savings(Decimal("2"), Decimal("2")) == 0
    assert savings(Decimal("2"), Decimal("0")) == 1
    with pytest.raises(ContractError):
        savings(Decimal("0"), Decimal("1"))


def test_report_rendering():
    text = worked_example_report().render()
    for needle in ["9,600 tokens", "$0.02304", "$0.00691", "$0.00622", "$0.00230", "$0.00852",
                   "$0.00211", "(~54%)"]:
        assert needle in text


def test_pricing_files(tmp_path):
    j = tmp_path / "p.json"
    j.write_text(json.dumps({"m": {"input_per_1k": "0.001", "output_per_1k": "0.003"}}))
    t = tmp_path / "p.toml"
    t.write_text('[m]\ninput_per_1k = "0.001"\noutput_per_1k = "0.003"\n')
    assert PricingTable.load(j) == PricingTable.load(t)
    assert PricingTable.load(j).rate("m").output_per_1k == Decimal("0.003")
    with pytest.raises(PricingError):
        PricingTable.from_mapping({"m": {"input_per_1k": 0.1, "output_per_1k": "0.1"}})


def _outcome(stages, repaired=False):
    kind = ActionKind.ESCALATE if repaired else ActionKind.ACCEPT
    action = TurnAction(kind, MonitorVerdict(int(repaired), 0.9), "fixed" if repaired else None)
    return TurnOutcome("d", 2, "u", "c", action, "c", tuple(stages))


def test_measured_cost_examples():
    assert measured_cost([], P).total == 0
    single = _outcome([StageUsage("assistant", LLAMA_70B, 40, 40, 0.0),
                       StageUsage("monitor", LLAMA_8B, 80, 0, 0.0)])
    assert measured_cost([single], P).total == Decimal("0.08") * (Decimal("0.00072") + Decimal("0.00022"))


def test_measured_cost_bills_repaired_turns_once():
    o = _outcome([StageUsage("assistant", LLAMA_70B, 40, 40, 0.0),
                  StageUsage("monitor", LLAMA_8B, 80, 0, 0.0),
                  StageUsage("superior", LLAMA_405B, 40, 40, 0.0)], repaired=True)
    once = measured_cost([o], P)
    assert "assistant" not in once.items and once.get("escalation") == Decimal("0.08") * Decimal("0.0024")
    assert measured_cost([o], P, double_bill=True).get("assistant") == Decimal("0.08") * Decimal("0.00072")


def test_measured_cost_unpriced_backend():
    with pytest.raises(PricingError):
        measured_cost([_outcome([StageUsage("assistant", "mystery", 1, 1, 0.0)])], P)


def test_scenario_file_mapping():
    s = scenario_from_mapping({"turns": 15, "assistant_model": LLAMA_70B, "monitor_model": LLAMA_8B,
                               "escalation_model": LLAMA_405B, "escalation_fraction": "0.1"})
    assert "monitor" in render_breakdown(scenario_cost(s, P))
