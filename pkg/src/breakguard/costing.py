"""Token budgets and money for tiered deployments.

Money is :class:`decimal.Decimal` throughout and only rounded for display.
The bundled :data:`BEDROCK_LLAMA_PRICING` table and
:func:`worked_example_report` reproduce the worked 15-turn example: a 70B
assistant, 405B escalation on 10% of tokens and an 8B monitor.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping

from .errors import ContractError, PricingError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

THOUSAND = Decimal(1000)
CENT_PLACES = Decimal("0.00001")


@dataclass(frozen=True)
class ModelRate:
    input_per_1k: Decimal
    output_per_1k: Decimal

    def __post_init__(self) -> None:
        if self.input_per_1k < 0 or self.output_per_1k < 0:
            raise ContractError("rates must be >= 0")


@dataclass(frozen=True)
class PricingTable:
    rates: Mapping[str, ModelRate]

    def rate(self, model: str) -> ModelRate:
        try:
            return self.rates[model]
        except KeyError:
            raise PricingError(f"no price for model {model!r}") from None

    @classmethod
    def from_mapping(cls, data: Mapping[str, Mapping[str, str]]) -> PricingTable:
        rates = {}
        for model, r in data.items():
            if isinstance(r.get("input_per_1k"), float) or isinstance(r.get("output_per_1k"), float):
                raise PricingError(f"{model}: give rates as decimal strings, not floats")
            rates[model] = ModelRate(Decimal(str(r["input_per_1k"])), Decimal(str(r["output_per_1k"])))
        return cls(rates)

    @classmethod
    def load(cls, path: str | Path) -> PricingTable:
        """Read ``{model: {input_per_1k, output_per_1k}}`` from a JSON or TOML file."""
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".toml":
            data = tomllib.loads(text)
        else:
            data = json.loads(text, parse_float=Decimal)
            data = {m: {k: str(v) for k, v in r.items()} for m, r in data.items()}
        return cls.from_mapping(data)


LLAMA_8B = "llama-3.1-8b"
LLAMA_70B = "llama-3.1-70b"
LLAMA_405B = "llama-3.1-405b"

# AWS Bedrock on-demand rates (USD per 1k tokens, May 2025); input and output are equal.
BEDROCK_LLAMA_PRICING = PricingTable.from_mapping({
    LLAMA_8B: {"input_per_1k": "0.00022", "output_per_1k": "0.00022"},
    LLAMA_70B: {"input_per_1k": "0.00072", "output_per_1k": "0.00072"},
    LLAMA_405B: {"input_per_1k": "0.00240", "output_per_1k": "0.00240"},
})


def dialogue_token_budget(n: int, tokens_per_message: int) -> int:
    """Total tokens when every turn resends the full history.

    Each turn adds a user message and a reply, so turn ``i`` carries
    ``2 * tokens_per_message * i`` tokens.
    """
    if n < 1 or tokens_per_message < 1:
        raise ContractError("need n >= 1 and tokens_per_message >= 1")
    return tokens_per_message * n * (n + 1)


@dataclass(frozen=True)
class CostScenario:
    turns: int
    assistant_model: str
    tokens_per_message: int = 40
    monitor_model: str | None = None
    escalation_model: str | None = None
    escalation_fraction: Decimal = Decimal(0)
    # also bill the assistant for escalated tokens (off: escalated tokens are billed once)
    double_bill: bool = False

    def __post_init__(self) -> None:
        if self.turns < 1:
            raise ContractError("a scenario needs at least one turn")
        if not 0 <= self.escalation_fraction <= 1:
            raise ContractError("escalation_fraction must lie in [0, 1]")
        if (self.escalation_model is not None) != (self.escalation_fraction > 0):
            raise ContractError("an escalation model goes with a positive escalation fraction")


@dataclass(frozen=True)
class CostBreakdown:
    """Itemized cost; ``tokens`` records the token count behind each item."""

    items: dict[str, Decimal] = field(default_factory=dict)
    tokens: dict[str, Decimal] = field(default_factory=dict)

    @property
    def total(self) -> Decimal:
        return sum(self.items.values(), Decimal(0))

    def get(self, item: str) -> Decimal:
        return self.items.get(item, Decimal(0))

    @property
    def dialogue(self) -> Decimal:
        """Cost of producing the replies (assistant plus escalation), excluding monitoring."""
        return self.get("assistant") + self.get("escalation")


def present(amount: Decimal, places: Decimal = CENT_PLACES) -> Decimal:
    return amount.quantize(places, rounding=ROUND_HALF_UP)


def _tokens_cost(tokens_in: Decimal, tokens_out: Decimal, rate: ModelRate) -> Decimal:
    return tokens_in / THOUSAND * rate.input_per_1k + tokens_out / THOUSAND * rate.output_per_1k


def scenario_cost(s: CostScenario, p: PricingTable) -> CostBreakdown:
    """Price a scenario.

    The budget is split into output tokens (one reply of ``tokens_per_message``
    per turn) and input tokens (the rest).  The escalation tier takes
    ``escalation_fraction`` of the budget and the assistant the remainder; the
    monitor reads the whole budget.
    """
    budget = Decimal(dialogue_token_budget(s.turns, s.tokens_per_message))
    out_tokens = Decimal(s.tokens_per_message * s.turns)
    in_tokens = budget - out_tokens
    f = Decimal(s.escalation_fraction)
    items: dict[str, Decimal] = {}
    tokens: dict[str, Decimal] = {}

    share = Decimal(1) if s.double_bill else 1 - f
    items["assistant"] = share * _tokens_cost(in_tokens, out_tokens, p.rate(s.assistant_model))
    tokens["assistant"] = share * budget
    if s.escalation_model is not None:
        items["escalation"] = f * _tokens_cost(in_tokens, out_tokens, p.rate(s.escalation_model))
        tokens["escalation"] = f * budget
    if s.monitor_model is not None:
        # the monitor only reads; its verdict tokens are not part of the reply budget
        items["monitor"] = _tokens_cost(budget, Decimal(0), p.rate(s.monitor_model))
        tokens["monitor"] = budget
    return CostBreakdown(items, tokens)


def savings(baseline: Decimal, alternative: Decimal) -> Decimal:
    """Fraction of ``baseline`` saved by ``alternative``."""
    baseline, alternative = Decimal(baseline), Decimal(alternative)
    if baseline <= 0:
        raise ContractError("baseline cost must be positive")
    return 1 - alternative / baseline


_STAGE_ITEM = {"assistant": "assistant", "superior": "escalation", "monitor": "monitor", "judge": "judge"}


def measured_cost(outcomes: Iterable, p: PricingTable, double_bill: bool = False) -> CostBreakdown:
    """Price recorded per-stage token counts from :class:`~breakguard.escalation.TurnOutcome` objects.

    Rates are looked up by each stage's ``backend_id``.  When a turn is
    escalated and repaired, its tokens are billed once, at the superior tier,
    and the assistant's draft is not billed. Pass ``double_bill=True`` to bill
    the draft as well.
    """
    items: dict[str, Decimal] = {}
    tokens: dict[str, Decimal] = {}
    for o in outcomes:
        repaired = o.action.repaired_response is not None
        for st in o.stages:
            if st.stage == "assistant" and repaired and not double_bill:
                continue
            rate = p.rate(st.backend_id)
            item = _STAGE_ITEM.get(st.stage, st.stage)
            cost = _tokens_cost(Decimal(st.prompt_tokens), Decimal(st.completion_tokens), rate)
            items[item] = items.get(item, Decimal(0)) + cost
            tokens[item] = tokens.get(item, Decimal(0)) + st.prompt_tokens + st.completion_tokens
    return CostBreakdown(items, tokens)


# -- the 15-turn worked example -------------------------------------------------


@dataclass(frozen=True)
class WorkedExampleReport:
    turns: int
    tokens_per_message: int
    budget_tokens: int
    always_405b: Decimal
    always_70b: Decimal
    selective_70b: Decimal
    selective_405b: Decimal
    selective_total: Decimal
    monitor: Decimal
    combined: Decimal
    savings: Decimal

    def lines(self) -> list[str]:
        d = present
        return [
            f"Token budget ({self.turns} turns, {self.tokens_per_message} tokens/message): "
            f"{self.budget_tokens:,} tokens",
            "",
            "Baseline costs",
            f"  Always 405B                          ${d(self.always_405b)}",
            f"  Always 70B                           ${d(self.always_70b)}",
            "",
            "Selective escalation (70B + 10% 405B)",
            f"  70B share                            ${d(self.selective_70b)}",
            f"  405B share                           ${d(self.selective_405b)}",
            f"  Total                                ${d(self.selective_total)}",
            "",
            "Adding a lightweight monitor (8B)",
            f"  Monitor                              ${d(self.monitor)}",
            f"  Monitor + dialogue                   ${d(self.combined)}",
            "",
            f"Savings vs always-405B                 {d(self.savings * 100, Decimal('0.01'))}%"
            f" (~{d(self.savings * 100, Decimal('1'))}%)",
        ]

    def render(self) -> str:
        return "\n".join(self.lines()) + "\n"


def worked_example_report(p: PricingTable = BEDROCK_LLAMA_PRICING, turns: int = 15,
                      tokens_per_message: int = 40) -> WorkedExampleReport:
    always_405 = scenario_cost(CostScenario(turns, LLAMA_405B, tokens_per_message), p)
    always_70 = scenario_cost(CostScenario(turns, LLAMA_70B, tokens_per_message), p)
    combined = scenario_cost(CostScenario(
        turns, LLAMA_70B, tokens_per_message, monitor_model=LLAMA_8B,
        escalation_model=LLAMA_405B, escalation_fraction=Decimal("0.1")), p)
    return WorkedExampleReport(
        turns=turns,
        tokens_per_message=tokens_per_message,
        budget_tokens=dialogue_token_budget(turns, tokens_per_message),
        always_405b=always_405.total,
        always_70b=always_70.total,
        selective_70b=combined.get("assistant"),
        selective_405b=combined.get("escalation"),
        selective_total=combined.dialogue,
        monitor=combined.get("monitor"),
        combined=combined.total,
        savings=savings(always_405.total, combined.total),
    )


def scenario_from_mapping(data: Mapping) -> CostScenario:
    return CostScenario(
        turns=int(data["turns"]),
        assistant_model=str(data["assistant_model"]),
        tokens_per_message=int(data.get("tokens_per_message", 40)),
        monitor_model=data.get("monitor_model"),
        escalation_model=data.get("escalation_model"),
        escalation_fraction=Decimal(str(data.get("escalation_fraction", "0"))),
        double_bill=bool(data.get("double_bill", False)),
    )


def render_breakdown(b: CostBreakdown) -> str:
    rows = [f"  {name:<12} {b.tokens.get(name, 0):>12,.0f} tokens   ${present(cost)}"
            for name, cost in b.items.items()]
    rows.append(f"  {'total':<12} {'':>19}   ${present(b.total)}")
    return "\n".join(rows) + "\n"
