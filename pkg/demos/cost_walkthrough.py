"""How much does a monitor plus selective escalation save over always using the big model?

Prices a 15-turn dialogue three ways and then tries a few escalation rates to
show how quickly the savings shrink.

    python demos/cost_walkthrough.py
"""

from __future__ import annotations

from decimal import Decimal

from breakguard import (
    BEDROCK_LLAMA_PRICING,
    CostScenario,
    dialogue_token_budget,
    present,
    savings,
    scenario_cost,
    worked_example_report,
)


def main() -> None:
    print(worked_example_report().render())

    turns = 15
    print(f"Every turn resends the history, so {turns} turns cost "
          f"{dialogue_token_budget(turns, 40):,} tokens rather than {turns * 80:,}.\n")

    baseline = scenario_cost(CostScenario(turns, "llama-3.1-405b"), BEDROCK_LLAMA_PRICING).total
    print("escalation rate   tiered cost   savings")
    for pct in (5, 10, 20, 40, 60):
        tiered = scenario_cost(CostScenario(
            turns, "llama-3.1-70b", monitor_model="llama-3.1-8b",
            escalation_model="llama-3.1-405b", escalation_fraction=Decimal(pct) / 100,
        ), BEDROCK_LLAMA_PRICING).total
        print(f"{pct:>14}%   ${present(tiered)}   {savings(baseline, tiered):7.2%}")


if __name__ == "__main__":
    main()
