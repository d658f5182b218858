"""Prompt compilation for breakdown classification.

A (history, target utterance) pair is compiled into a :class:`PromptBundle`
for one of seven strategies: ZS, CoT, 2S-Easy, 2S-Hard, 4S, AR and CL+AR.
Bundles are plain data (ordered text segments) so they can be fingerprinted,
golden-tested and sent to any chat-completion backend.
"""

from __future__ import annotations

import enum
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from importlib import resources
from string import Template
from typing import TYPE_CHECKING, Callable, Iterable, Sequence

from .core import BinaryLabel, Dialogue, Speaker, Turn
from .errors import BudgetError, ContractError, GenerationError, InsufficientExemplarsError
from .ingest import consolidate

if TYPE_CHECKING:
    from .backends import GenerationParams, ModelBackend

TEMPLATE_VERSION = "v1"
DEFAULT_TOKEN_CAP = 2048

# Field order matters: asking for the justification first gives more
# deliberate decisions than asking for the decision first.
RESPONSE_SCHEMA: tuple[str, ...] = ("justification", "decision", "confidence")

_FIELD_HELP = {
    "justification": "a brief explanation of your reasoning",
    "decision": 'either "breakdown" or "non-breakdown"',
    "confidence": "a number between 0 and 1 giving your certainty in the decision",
}

DECISION_WORDS = {1: "breakdown", 0: "non-breakdown"}


class StrategyKind(str, enum.Enum):
    ZS = "ZS"
    COT = "CoT"
    FS = "FS"
    AR = "AR"
    CLAR = "CL+AR"


class Difficulty(str, enum.Enum):
    EASY = "Easy"
    HARD = "Hard"


class ExemplarMix(str, enum.Enum):
    EASY = "Easy"
    HARD = "Hard"
    MIXED = "Mixed"


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    shots: int | None = None
    exemplar_mix: ExemplarMix | None = None
    analogy_count: int | None = None

    def __post_init__(self) -> None:
        if self.kind is StrategyKind.FS:
            if self.shots not in (2, 4):
                raise ContractError("few-shot strategies use 2 or 4 shots")
            if self.exemplar_mix is None:
                raise ContractError("few-shot strategies need an exemplar mix")
            if (self.shots == 4) != (self.exemplar_mix is ExemplarMix.MIXED):
                raise ContractError("4-shot uses the Mixed exemplar mix and only it does")
        elif self.shots is not None or self.exemplar_mix is not None:
            raise ContractError(f"{self.kind.value} takes no exemplars")
        if self.kind in (StrategyKind.AR, StrategyKind.CLAR):
            if self.analogy_count is None or self.analogy_count < 1:
                raise ContractError("analogical strategies need analogy_count >= 1")
        elif self.analogy_count is not None:
            raise ContractError(f"{self.kind.value} takes no analogy count")

    @property
    def name(self) -> str:
        if self.kind is StrategyKind.FS:
            return "4S" if self.shots == 4 else f"2S-{self.exemplar_mix.value}"
        return self.kind.value

    @classmethod
    def parse(cls, name: str, analogy_count: int = 3) -> Strategy:
        """Build a strategy from its short name (``"ZS"``, ``"2S-Hard"``, ``"CL+AR"``, ...)."""
        key = name.strip().lower().replace("_", "-")
        table = {
            "zs": cls(StrategyKind.ZS),
            "cot": cls(StrategyKind.COT),
            "2s-easy": cls(StrategyKind.FS, 2, ExemplarMix.EASY),
            "2s-hard": cls(StrategyKind.FS, 2, ExemplarMix.HARD),
            "4s": cls(StrategyKind.FS, 4, ExemplarMix.MIXED),
        }
        if key in table:
            return table[key]
        if key == "ar":
            return cls(StrategyKind.AR, analogy_count=analogy_count)
        if key in ("cl+ar", "clar", "cl-ar"):
            return cls(StrategyKind.CLAR, analogy_count=analogy_count)
        raise ContractError(f"unknown strategy {name!r}")


ALL_STRATEGIES = ("ZS", "CoT", "2S-Easy", "2S-Hard", "4S", "AR", "CL+AR")


# -- exemplars -----------------------------------------------------------------

EASY_MIN_AGREEMENT = Fraction(4, 5)
HARD_AGREEMENT = (Fraction(3, 5), Fraction(7, 10))
EASY_TURNS = (15, 20)
HARD_TURNS = (21, 30)


def agreement(label: BinaryLabel) -> Fraction:
    """Share of annotators whose (consolidated) vote matches the label."""
    if label.source_fraction is None:
        return Fraction(1)
    return label.source_fraction if label.value == 1 else 1 - label.source_fraction


def difficulty_by_agreement(a: Fraction | float) -> Difficulty | None:
    a = Fraction(a).limit_denominator(10**6) if isinstance(a, float) else a
    if a > EASY_MIN_AGREEMENT:
        return Difficulty.EASY
    if HARD_AGREEMENT[0] <= a <= HARD_AGREEMENT[1]:
        return Difficulty.HARD
    return None


def difficulty_by_length(n_turns: int) -> Difficulty | None:
    if EASY_TURNS[0] <= n_turns <= EASY_TURNS[1]:
        return Difficulty.EASY
    if HARD_TURNS[0] <= n_turns <= HARD_TURNS[1]:
        return Difficulty.HARD
    return None


@dataclass
class Exemplar:
    """A labelled example for few-shot prompts.

    ``target_turn_index`` is ``None`` for conversation-level exemplars, whose
    difficulty is set by dialogue length rather than annotator agreement.
    ``reasoning`` may be filled in later by :func:`generate_exemplar_reasoning`.
    """

    dialogue: Dialogue
    target_turn_index: int | None
    label: BinaryLabel
    agreement: Fraction
    difficulty: Difficulty
    reasoning: str | None = None

    def __post_init__(self) -> None:
        if self.target_turn_index is None:
            expected = difficulty_by_length(len(self.dialogue.turns))
        else:
            expected = difficulty_by_agreement(self.agreement)
        if expected is not self.difficulty:
            raise ContractError(
                f"exemplar {self.dialogue.id}/{self.target_turn_index} does not qualify as {self.difficulty.value}")

    @property
    def conversation_level(self) -> bool:
        return self.target_turn_index is None

    @property
    def key(self) -> tuple[str, int]:
        return (self.dialogue.id, self.target_turn_index or 0)


def build_exemplar_pool(dialogues: Iterable[Dialogue], conversation_level: bool = False) -> list[Exemplar]:
    """Every turn (or dialogue) that qualifies as Easy or Hard, in input order."""
    pool = []
    for d in dialogues:
        if conversation_level:
            diff = difficulty_by_length(len(d.turns))
            if diff is not None and d.conversation_label is not None:
                pool.append(Exemplar(d, None, BinaryLabel(d.conversation_label), Fraction(1), diff))
            continue
        for t in d.system_turns:
            if t.annotations is None:
                continue
            label = consolidate(t.annotations)
            agr = agreement(label)
            diff = difficulty_by_agreement(agr)
            if diff is not None:
                pool.append(Exemplar(d, t.index, label, agr, diff))
    return pool


def _required_buckets(s: Strategy) -> list[tuple[Difficulty, int]]:
    # breakdown first, then non-breakdown; easy before hard
    if s.kind is not StrategyKind.FS:
        return []
    if s.exemplar_mix is ExemplarMix.EASY:
        return [(Difficulty.EASY, 1), (Difficulty.EASY, 0)]
    if s.exemplar_mix is ExemplarMix.HARD:
        return [(Difficulty.HARD, 1), (Difficulty.HARD, 0)]
    return [(Difficulty.EASY, 1), (Difficulty.EASY, 0), (Difficulty.HARD, 1), (Difficulty.HARD, 0)]


def select_exemplars(pool: Sequence[Exemplar], s: Strategy, seed: int) -> list[Exemplar]:
    """Pick one exemplar per required (difficulty, label) bucket with a seeded RNG."""
    buckets = _required_buckets(s)
    for diff, lab in set(buckets):
        need = buckets.count((diff, lab))
        have = sum(1 for e in pool if e.difficulty is diff and e.label.value == lab)
        if have < need:
            raise InsufficientExemplarsError(diff.value, DECISION_WORDS[lab].title(), need, have)
    rng = random.Random(seed)
    chosen: list[Exemplar] = []
    for diff, lab in buckets:
        candidates = [e for e in pool
                      if e.difficulty is diff and e.label.value == lab and all(e is not c for c in chosen)]
        chosen.append(rng.choice(candidates))
    return chosen


# -- bundles -------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One ordered piece of a prompt; ``kind`` says what it holds."""

    kind: str
    text: str

    @property
    def role(self) -> str:
        return "system" if self.kind == "instruction" else "user"


TokenEstimator = Callable[[str], int]


def word_estimator(text: str) -> int:
    """Approximate tokens as whitespace words x 4/3, rounded up."""
    words = len(text.split())
    return (4 * words + 2) // 3


@dataclass(frozen=True)
class PromptBundle:
    messages: tuple[Segment, ...]
    response_schema: tuple[str, ...] = RESPONSE_SCHEMA
    strategy: Strategy | None = None
    estimated_tokens: int = 0

    def to_chat_messages(self) -> list[dict[str, str]]:
        """Collapse segments into the system/user pair most chat endpoints expect."""
        system = [m.text for m in self.messages if m.role == "system"]
        user = [m.text for m in self.messages if m.role == "user"]
        out = []
        if system:
            out.append({"role": "system", "content": "\n\n".join(system)})
        if user:
            out.append({"role": "user", "content": "\n\n".join(user)})
        return out

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.name if self.strategy else None,
            "template_version": TEMPLATE_VERSION,
            "messages": [{"kind": m.kind, "role": m.role, "text": m.text} for m in self.messages],
            "response_schema": list(self.response_schema),
            "estimated_tokens": self.estimated_tokens,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2) + "\n"

    @property
    def text(self) -> str:
        return "\n\n".join(m.text for m in self.messages)


def estimate_tokens(b: PromptBundle, estimator: TokenEstimator = word_estimator) -> int:
    """Token estimate summed per segment, so it is additive over messages."""
    return sum(estimator(m.text) for m in b.messages)


@dataclass(frozen=True)
class PromptConfig:
    token_cap: int = DEFAULT_TOKEN_CAP
    estimator: TokenEstimator = field(default=word_estimator, compare=False)
    # instructions are shipped in English only; Japanese dialogues are rendered verbatim
    instruction_language: str = "en"


@lru_cache(maxsize=None)
def load_template(name: str, language: str = "en") -> Template:
    pkg = resources.files("breakguard") / "templates" / TEMPLATE_VERSION / language / f"{name}.txt"
    try:
        return Template(pkg.read_text(encoding="utf-8").rstrip("\n"))
    except FileNotFoundError:
        raise ContractError(f"no {language!r} template named {name!r}") from None


def _t(name: str, config: PromptConfig, **subs) -> str:
    return load_template(name, config.instruction_language).substitute(**subs)


def render_turn(t: Turn) -> str:
    # task turns are already textualized with their speaker prefix
    if t.task is not None:
        return f"{t.index}. {t.text}"
    return f"{t.index}. {t.speaker.title}: {t.text}"


def render_turns(turns: Iterable[Turn]) -> str:
    lines = [render_turn(t) for t in turns]
    return "\n".join(lines) if lines else "(no earlier turns)"


def response_instruction(config: PromptConfig | None = None) -> str:
    config = config or PromptConfig()
    fields = "\n".join(f'"{f}": {_FIELD_HELP[f]}' for f in RESPONSE_SCHEMA)
    return _t("response", config, fields=fields)


def exemplar_answer(e: Exemplar) -> str:
    answer: dict[str, object] = {}
    if e.reasoning:
        answer["justification"] = e.reasoning
    answer["decision"] = DECISION_WORDS[e.label.value]
    answer["confidence"] = round(float(e.agreement), 2)
    return json.dumps(answer, ensure_ascii=False)


def _exemplar_body(e: Exemplar, config: PromptConfig) -> str:
    if e.conversation_level:
        return "\n".join([render_turns(e.dialogue.turns), _t("conversation_target", config)])
    turns = [t for t in e.dialogue.turns if t.index < e.target_turn_index]
    target = next(t for t in e.dialogue.turns if t.index == e.target_turn_index)
    return "\n".join([render_turns(turns), _t("target", config), render_turn(target)])


def render_exemplar(e: Exemplar, n: int, config: PromptConfig) -> str:
    return f"Example {n}:\n{_exemplar_body(e, config)}\nAnswer: {exemplar_answer(e)}"


def _strategy_segments(s: Strategy, exemplars: Sequence[Exemplar], config: PromptConfig) -> list[Segment]:
    if s.kind is StrategyKind.FS:
        want = _required_buckets(s)
        got = [(e.difficulty, e.label.value) for e in exemplars]
        if sorted(got, key=repr) != sorted(want, key=repr):
            raise ContractError(f"{s.name} needs exemplars {want}, got {got}")
        return [Segment("exemplar", render_exemplar(e, n, config)) for n, e in enumerate(exemplars, 1)]
    if exemplars:
        raise ContractError(f"{s.name} takes no exemplars")
    if s.kind is StrategyKind.AR:
        return [Segment("analogy", _t("analogy", config, count=s.analogy_count))]
    if s.kind is StrategyKind.CLAR:
        return [Segment("analogy", _t("curriculum_analogy", config, count=s.analogy_count))]
    return []


def _finish(segments: list[Segment], s: Strategy, config: PromptConfig) -> PromptBundle:
    if s.kind is StrategyKind.COT:
        segments.append(Segment("cot", _t("cot", config)))
    segments.append(Segment("response_format", response_instruction(config)))
    bundle = PromptBundle(tuple(segments), RESPONSE_SCHEMA, s)
    n = estimate_tokens(bundle, config.estimator)
    if n > config.token_cap:
        raise BudgetError(n, config.token_cap)
    return PromptBundle(bundle.messages, RESPONSE_SCHEMA, s, n)


def render_prompt(
    history: Sequence[Turn],
    target: Turn,
    s: Strategy,
    exemplars: Sequence[Exemplar] = (),
    config: PromptConfig | None = None,
) -> PromptBundle:
    """Compile a per-utterance classification prompt.

    Segment order: instruction, exemplars or analogy directive, dialogue
    context, target utterance, optional step-by-step directive, response
    format.
    """
    config = config or PromptConfig()
    if target.speaker is not Speaker.SYSTEM:
        raise ContractError("the target utterance must be a system turn")
    segments = [Segment("instruction", _t("instruction", config))]
    segments += _strategy_segments(s, exemplars, config)
    segments.append(Segment("context", "Dialogue:\n" + render_turns(history)))
    segments.append(Segment("target", f"{_t('target', config)}\n{render_turn(target)}"))
    return _finish(segments, s, config)


def render_conversation_prompt(
    dialogue: Dialogue,
    s: Strategy,
    exemplars: Sequence[Exemplar] = (),
    config: PromptConfig | None = None,
) -> PromptBundle:
    """Compile a whole-conversation prompt (one verdict after the final turn)."""
    config = config or PromptConfig()
    segments = [Segment("instruction", _t("conversation_instruction", config))]
    segments += _strategy_segments(s, exemplars, config)
    segments.append(Segment("context", "Conversation:\n" + render_turns(dialogue.turns)))
    segments.append(Segment("target", _t("conversation_target", config)))
    return _finish(segments, s, config)


def generate_exemplar_reasoning(
    backend: ModelBackend,
    e: Exemplar,
    params: GenerationParams | None = None,
    config: PromptConfig | None = None,
) -> str:
    """Ask a backend for step-by-step reasoning behind an exemplar's known label; caches it on ``e``."""
    from .backends import GenerationParams, complete

    if e.reasoning is not None:
        raise ContractError(f"exemplar {e.key} already has reasoning")
    config = config or PromptConfig()
    decision = DECISION_WORDS[e.label.value]
    segments = (
        Segment("instruction", _t("reasoning", config, decision=decision,
                                  confidence=f"{float(e.agreement):.2f}")),
        Segment("context", _exemplar_body(e, config)),
    )
    bundle = PromptBundle(segments, (), None)
    bundle = PromptBundle(segments, (), None, estimate_tokens(bundle, config.estimator))
    text = complete(backend, bundle, params or GenerationParams()).text.strip()
    if not text:
        raise GenerationError(f"backend returned empty reasoning for exemplar {e.key}")
    e.reasoning = text
    return text


def make_bundle(segments: Iterable[Segment], config: PromptConfig | None = None,
                response_schema: tuple[str, ...] = ()) -> PromptBundle:
    """Wrap ad-hoc segments (assistant, repair, judge prompts) in a bundle with a token estimate."""
    config = config or PromptConfig()
    segs = tuple(segments)
    n = sum(config.estimator(m.text) for m in segs)
    if n > config.token_cap:
        raise BudgetError(n, config.token_cap)
    return PromptBundle(segs, response_schema, None, n)
