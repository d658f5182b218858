from __future__ import annotations

import json
import os
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from breakguard.backends import ScriptedBackend
from breakguard.core import BinaryLabel, Dialogue, Language, Speaker, Turn
from breakguard.errors import BudgetError, ContractError, GenerationError, InsufficientExemplarsError
from breakguard.ingest import DatasetKind, parse_betold, parse_file
from breakguard.prompting import (
    ALL_STRATEGIES,
    RESPONSE_SCHEMA,
    Difficulty,
    Exemplar,
    ExemplarMix,
    PromptBundle,
    PromptConfig,
    Segment,
    Strategy,
    StrategyKind,
    build_exemplar_pool,
    difficulty_by_agreement,
    difficulty_by_length,
    estimate_tokens,
    generate_exemplar_reasoning,
    render_conversation_prompt,
    render_prompt,
    select_exemplars,
    word_estimator,
)

from conftest import DATA, GOLDENS, SHOPPING, turns_from

UPDATE = os.environ.get("BREAKGUARD_UPDATE_GOLDENS") == "1"


def train_pool():
    return build_exemplar_pool(parse_file(DATA / "dbdc_train.json", DatasetKind.UTTERANCE_LEVEL))


def render_golden(name: str, seed: int = 0) -> PromptBundle:
    s = Strategy.parse(name)
    exemplars = select_exemplars(train_pool(), s, seed) if s.shots else []
    return render_prompt(SHOPPING[:4], SHOPPING[4], s, exemplars)


def golden_path(name: str):
    return GOLDENS / f"{name.replace('+', '_')}.json"


# -- goldens ------------------------------------------------------------------------


@pytest.mark.parametrize("name", ALL_STRATEGIES)
def test_bundle_matches_golden(name):
    rendered = render_golden(name).to_json()
    path = golden_path(name)
    if UPDATE:
        path.write_text(rendered, encoding="utf-8")
    assert rendered == path.read_text(encoding="utf-8")


@pytest.mark.parametrize("name", ALL_STRATEGIES)
def test_rendering_is_deterministic(name):
    assert render_golden(name, seed=7).to_json() == render_golden(name, seed=7).to_json()


# -- strategy structure -------------------------------------------------------------


def test_zero_shot_structure():
    b = render_golden("ZS")
    assert [m.kind for m in b.messages] == ["instruction", "context", "target", "response_format"]
    assert b.messages[2].text == ("Determine if the next utterance causes a breakdown:\n"
                                  "5. System: It's fun to go shopping with somebody.")
    assert b.response_schema == RESPONSE_SCHEMA == ("justification", "decision", "confidence")
    fmt = b.messages[-1].text
    assert fmt.index('"justification"') < fmt.index('"decision"') < fmt.index('"confidence"')


def test_cot_adds_only_the_step_by_step_directive():
    zs, cot = render_golden("ZS"), render_golden("CoT")
    kinds = [m.kind for m in cot.messages]
    assert kinds == ["instruction", "context", "target", "cot", "response_format"]
    assert cot.messages[3].text == "Let's think step by step."
    assert [m for m in cot.messages if m.kind != "cot"] == list(zs.messages)


@pytest.mark.parametrize("name, k, mix", [
    ("2S-Easy", 2, [(Difficulty.EASY, 1), (Difficulty.EASY, 0)]),
    ("2S-Hard", 2, [(Difficulty.HARD, 1), (Difficulty.HARD, 0)]),
    ("4S", 4, [(Difficulty.EASY, 1), (Difficulty.EASY, 0), (Difficulty.HARD, 1), (Difficulty.HARD, 0)]),
])
def test_few_shot_exemplar_mix(name, k, mix):
    s = Strategy.parse(name)
    chosen = select_exemplars(train_pool(), s, seed=3)
    assert [(e.difficulty, e.label.value) for e in chosen] == mix
    b = render_prompt(SHOPPING[:4], SHOPPING[4], s, chosen)
    assert sum(m.kind == "exemplar" for m in b.messages) == k


@pytest.mark.parametrize("name", ["AR", "CL+AR"])
def test_analogy_strategies_have_one_directive_and_no_exemplars(name):
    b = render_golden(name)
    kinds = [m.kind for m in b.messages]
    assert kinds.count("analogy") == 1 and "exemplar" not in kinds
    directive = next(m.text for m in b.messages if m.kind == "analogy")
    assert "construct 3 past dialogues similar to this one" in directive
    if name == "CL+AR":
        assert "gradually increase in difficulty" in directive
        assert "culminating in the target-like scenario" in directive


def test_analogy_count_is_configurable():
    b = render_prompt(SHOPPING[:4], SHOPPING[4], Strategy.parse("AR", analogy_count=5))
    assert "construct 5 past dialogues" in b.text


def test_target_must_be_system_turn():
    with pytest.raises(ContractError):
        render_prompt(SHOPPING[:3], SHOPPING[3], Strategy.parse("ZS"))


def test_budget_error_carries_overage():
    cfg = PromptConfig(token_cap=50)
    full = render_prompt(SHOPPING[:4], SHOPPING[4], Strategy.parse("ZS"))
    with pytest.raises(BudgetError) as exc:
        render_prompt(SHOPPING[:4], SHOPPING[4], Strategy.parse("ZS"), config=cfg)
    assert exc.value.overage == full.estimated_tokens - 50


def test_exemplars_must_fit_strategy():
    with pytest.raises(ContractError):
        render_prompt(SHOPPING[:4], SHOPPING[4], Strategy.parse("ZS"), train_pool()[:1])
    easy = select_exemplars(train_pool(), Strategy.parse("2S-Easy"), 0)
    with pytest.raises(ContractError):
        render_prompt(SHOPPING[:4], SHOPPING[4], Strategy.parse("2S-Hard"), easy)


@pytest.mark.parametrize("kwargs", [
    dict(kind=StrategyKind.FS, shots=3, exemplar_mix=ExemplarMix.EASY),
    dict(kind=StrategyKind.FS, shots=4, exemplar_mix=ExemplarMix.EASY),
    dict(kind=StrategyKind.FS, shots=2, exemplar_mix=ExemplarMix.MIXED),
    dict(kind=StrategyKind.AR, analogy_count=0),
    dict(kind=StrategyKind.ZS, shots=2),
])
def test_invalid_strategies(kwargs):
    with pytest.raises(ContractError):
        Strategy(**kwargs)


def test_strategy_names_round_trip():
    assert [Strategy.parse(n).name for n in ALL_STRATEGIES] == list(ALL_STRATEGIES)


# -- exemplar selection -------------------------------------------------------------


def _exemplar(did: str, b: int, nb: int) -> Exemplar:
    turns = (Turn(1, Speaker.USER, "u"), Turn(2, Speaker.SYSTEM, f"s-{did}"))
    p = Fraction(b, b + nb)
    label = BinaryLabel(int(p >= Fraction(1, 2)), p)
    agr = p if label.value else 1 - p
    return Exemplar(Dialogue(did, Language.ENGLISH, turns), 2, label, agr, difficulty_by_agreement(agr))


def test_only_possible_selection_breakdown_first():
    pool = [_exemplar("nb", 0, 10), _exemplar("b", 10, 0)]
    assert [e.dialogue.id for e in select_exemplars(pool, Strategy.parse("2S-Easy"), 99)] == ["b", "nb"]


def test_missing_bucket_is_named():
    pool = [_exemplar("easy-b", 10, 0), _exemplar("easy-nb", 0, 10), _exemplar("hard-nb", 3, 7)]
    with pytest.raises(InsufficientExemplarsError) as exc:
        select_exemplars(pool, Strategy.parse("2S-Hard"), 0)
    assert exc.value.bucket == ("Hard", "Breakdown")


def test_selection_is_seeded():
    pool = [_exemplar(f"b{i}", 9, 1) for i in range(5)] + [_exemplar(f"n{i}", 1, 9) for i in range(5)]
    s = Strategy.parse("2S-Easy")
    assert select_exemplars(pool, s, 4) == select_exemplars(pool, s, 4)
    picks = {tuple(e.dialogue.id for e in select_exemplars(pool, s, seed)) for seed in range(30)}
    assert len(picks) > 1


@pytest.mark.parametrize("agreement, expected", [
    (Fraction(81, 100), Difficulty.EASY), (Fraction(4, 5), None), (Fraction(7, 10), Difficulty.HARD),
    (Fraction(3, 5), Difficulty.HARD), (Fraction(59, 100), None), (Fraction(3, 4), None),
])
def test_agreement_bands(agreement, expected):
    assert difficulty_by_agreement(agreement) is expected


@pytest.mark.parametrize("n, expected", [(14, None), (15, Difficulty.EASY), (20, Difficulty.EASY),
                                         (21, Difficulty.HARD), (30, Difficulty.HARD), (31, None)])
def test_length_bands(n, expected):
    assert difficulty_by_length(n) is expected


def test_exemplar_difficulty_is_checked():
    e = _exemplar("x", 9, 1)
    with pytest.raises(ContractError):
        Exemplar(e.dialogue, 2, e.label, e.agreement, Difficulty.HARD)


def test_conversation_pool_uses_length():
    pool = build_exemplar_pool(parse_file(DATA / "betold_sample.json", DatasetKind.CONVERSATION_LEVEL),
                               conversation_level=True)
    assert {(e.dialogue.id, e.difficulty) for e in pool} == {
        ("bt-easy-1", Difficulty.EASY), ("bt-easy-0", Difficulty.EASY),
        ("bt-hard-1", Difficulty.HARD), ("bt-hard-0", Difficulty.HARD)}
    assert all(e.conversation_level for e in pool)


def test_conversation_prompt():
    dialogues = parse_file(DATA / "betold_sample.json", DatasetKind.CONVERSATION_LEVEL)
    pool = build_exemplar_pool(dialogues, conversation_level=True)
    s = Strategy.parse("4S")
    b = render_conversation_prompt(dialogues[-1], s, select_exemplars(pool, s, 0))
    assert sum(m.kind == "exemplar" for m in b.messages) == 4
    assert "1. User: Intent: request_info | Entities: account" in b.text


# -- reasoning generation --------------------------------------------------------------


def test_reasoning_mentions_decision_and_is_cached():
    e = _exemplar("b", 9, 1)
    backend = ScriptedBackend(lambda bundle, params: "Step 1 ... so this is a breakdown.")
    text = generate_exemplar_reasoning(backend, e)
    assert "breakdown" in text and e.reasoning == text
    prompt = backend.calls[0].text
    assert "breakdown" in prompt and "0.90" in prompt
    with pytest.raises(ContractError):
        generate_exemplar_reasoning(backend, e)


def test_reasoning_empty_completion():
    with pytest.raises(GenerationError):
        generate_exemplar_reasoning(ScriptedBackend("  "), _exemplar("b", 9, 1))


def test_reasoning_appears_in_exemplar_answer():
    e = _exemplar("b", 9, 1)
    generate_exemplar_reasoning(ScriptedBackend("It ignores the question, a breakdown."), e)
    answer = json.loads(render_prompt(SHOPPING[:4], SHOPPING[4], Strategy.parse("2S-Easy"),
                                      [e, _exemplar("n", 0, 9)]).messages[1].text.split("Answer: ")[1])
    assert list(answer) == ["justification", "decision", "confidence"]


# -- token estimate -----------------------------------------------------------------


def test_estimate_examples():
    thirty = " ".join(["word"] * 30)
    assert estimate_tokens(PromptBundle(())) == 0
    assert estimate_tokens(PromptBundle((Segment("context", thirty),))) == 40
    assert estimate_tokens(PromptBundle((Segment("context", thirty), Segment("target", thirty)))) == 80


@given(st.lists(st.text(max_size=60), max_size=6))
def test_estimate_is_additive(texts):
    segs = tuple(Segment("context", t) for t in texts)
    assert estimate_tokens(PromptBundle(segs)) == sum(word_estimator(t) for t in texts)
    assert estimate_tokens(PromptBundle(segs)) == sum(estimate_tokens(PromptBundle((s,))) for s in segs)


def test_chat_messages_split_by_role():
    msgs = render_golden("ZS").to_chat_messages()
    assert [m["role"] for m in msgs] == ["system", "user"]
