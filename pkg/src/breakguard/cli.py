"""``breakguard`` command line.

Exit codes: 0 success, 2 validation or configuration error, 3 backend
transport failure, 4 replay fixture miss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .backends import ModelBackend, ScriptedBackend, serialize_verdict
from .config import FixtureMode, build_backends, load_config
from .core import Dialogue, MonitorVerdict, Speaker, Turn, validate_dialogue
from .costing import (
    BEDROCK_LLAMA_PRICING,
    PricingTable,
    worked_example_report,
    render_breakdown,
    scenario_cost,
    scenario_from_mapping,
    tomllib,
)
from .errors import BreakguardError, FixtureMissError, TransportError
from .escalation import AlertCollector, EscalationPolicy, Pipeline, audit_log
from .evaluation import EvaluationOptions, evaluate_dialogues
from .ingest import DatasetKind, load_dataset, load_manifest, parse_file, serialize_dialogues
from .metrics import default_thresholds, sensitivity_sweep, sweep_csv
from .prompting import (
    ALL_STRATEGIES,
    PromptConfig,
    Strategy,
    build_exemplar_pool,
    render_conversation_prompt,
    render_prompt,
    select_exemplars,
)

EXIT_OK, EXIT_VALIDATION, EXIT_TRANSPORT, EXIT_FIXTURE_MISS = 0, 2, 3, 4

log = logging.getLogger("breakguard")


# -- ingest --------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    dialogues = load_dataset(manifest, workers=args.workers)
    bad = 0
    if args.validate:
        for d in dialogues:
            report = validate_dialogue(d)
            for v in report.violations:
                bad += 1
                print(f"{d.id} turn {v.turn_index}: [{v.rule}] {v.message}", file=sys.stderr)
    if args.out:
        Path(args.out).write_bytes(serialize_dialogues(dialogues))
    turns = sum(len(d.turns) for d in dialogues)
    print(f"{len(dialogues)} dialogues, {turns} turns, {bad} violations")
    return EXIT_VALIDATION if bad else EXIT_OK


# -- prompts -------------------------------------------------------------------


def _pick_dialogue(dialogues: Sequence[Dialogue], did: str | None) -> Dialogue:
    if not dialogues:
        raise BreakguardError("input file holds no dialogues")
    if did is None:
        return dialogues[0]
    for d in dialogues:
        if d.id == did:
            return d
    raise BreakguardError(f"no dialogue with id {did!r}")


def cmd_prompts_render(args: argparse.Namespace) -> int:
    kind = DatasetKind(args.kind)
    conversation = kind is DatasetKind.CONVERSATION_LEVEL
    strategy = Strategy.parse(args.strategy, analogy_count=args.analogies)
    config = PromptConfig(token_cap=args.token_cap)
    d = _pick_dialogue(parse_file(args.input, kind), args.dialogue)
    exemplars = []
    if strategy.shots:
        if not args.pool:
            raise BreakguardError(f"{strategy.name} needs --pool")
        pool = build_exemplar_pool(parse_file(args.pool, kind), conversation_level=conversation)
        exemplars = select_exemplars(pool, strategy, args.seed)
    if conversation:
        bundle = render_conversation_prompt(d, strategy, exemplars, config)
    else:
        if args.turn is None:
            raise BreakguardError("utterance-level prompts need --turn")
        pos = next((i for i, t in enumerate(d.turns) if t.index == args.turn), None)
        if pos is None:
            raise BreakguardError(f"dialogue {d.id} has no turn {args.turn}")
        bundle = render_prompt(d.turns[:pos], d.turns[pos], strategy, exemplars, config)
    sys.stdout.write(bundle.to_json() if args.format == "json" else bundle.text + "\n")
    return EXIT_OK


# -- evaluate / sweep ----------------------------------------------------------


def _preflight(backend: ModelBackend) -> None:
    inner = getattr(backend, "inner", backend)
    check = getattr(inner, "health_check", None)
    if check is not None:
        check()


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    if args.mode:
        cfg = replace(cfg, fixture_mode=FixtureMode(args.mode))
    if args.fixtures:
        cfg = replace(cfg, fixture_dir=Path(args.fixtures))
    cfg.validate()
    manifest = load_manifest(args.manifest)
    conversation = manifest.dataset_kind is DatasetKind.CONVERSATION_LEVEL
    dialogues = load_dataset(manifest, workers=args.workers)
    strategy = Strategy.parse(args.strategy, analogy_count=args.analogies)
    pool = []
    if args.pool:
        pool = build_exemplar_pool(load_dataset(load_manifest(args.pool)), conversation_level=conversation)

    backends = build_backends(cfg)
    if cfg.fixture_mode is not FixtureMode.REPLAY:
        _preflight(backends["monitor"])  # fail before any evaluation work
    opts = EvaluationOptions(
        strategy=strategy, seed=args.seed, subsample=args.subsample, workers=args.workers,
        thresholds=default_thresholds(args.step), conversation_level=conversation,
        params=cfg.params, prompt_config=PromptConfig(token_cap=cfg.params.max_total_tokens),
    )
    run = evaluate_dialogues(dialogues, backends["monitor"], opts, judge=backends.get("judge"), pool=pool)
    report_path, sweep_path = run.write(args.out)
    rows = []
    for r in run.results:
        rows.append(json.dumps({
            "dialogue_id": r.dialogue_id, "turn_index": r.turn_index, "gold": r.gold.value,
            "verdict": None if r.verdict is None else {
                "label": r.verdict.label, "confidence": r.verdict.confidence,
                "justification": r.verdict.justification},
            "error": r.error,
        }, sort_keys=True, ensure_ascii=False))
    (Path(args.out) / "verdicts.jsonl").write_text("".join(x + "\n" for x in rows), encoding="utf-8")
    rep = run.report
    print(f"n={rep.n} excluded={rep.excluded} accuracy={rep.accuracy:.4f} -> {report_path}, {sweep_path}")
    if run.fixture_misses:
        print(f"{run.fixture_misses} units had no recorded fixture", file=sys.stderr)
        return EXIT_FIXTURE_MISS
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    verdicts, gold = [], []
    for line in Path(args.input).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        v = row.get("verdict")
        if v is None:
            continue
        verdicts.append(MonitorVerdict(int(v["label"]), float(v["confidence"]), v.get("justification", "")))
        gold.append(int(row["gold"]))
    points = sensitivity_sweep(verdicts, gold, default_thresholds(args.step))
    text = sweep_csv(points)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- cost ----------------------------------------------------------------------


def cmd_cost(args: argparse.Namespace) -> int:
    pricing = PricingTable.load(args.pricing) if args.pricing else BEDROCK_LLAMA_PRICING
    if args.scenario == "appendix_a":
        sys.stdout.write(worked_example_report(pricing).render())
        return EXIT_OK
    path = Path(args.scenario)
    text = path.read_text(encoding="utf-8")
    data = tomllib.loads(text) if path.suffix == ".toml" else json.loads(text)
    sys.stdout.write(render_breakdown(scenario_cost(scenario_from_mapping(data), pricing)))
    return EXIT_OK


# -- serve ---------------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .gateway import app_from_config

    cfg = load_config(args.config)
    app = app_from_config(cfg)
    uvicorn.run(app, host=args.host or cfg.host, port=args.port or cfg.port)
    return EXIT_OK


# -- repair demo ---------------------------------------------------------------

DEMO_HISTORY = (
    Turn(1, Speaker.SYSTEM, "It's nice to go shopping alone."),
    Turn(2, Speaker.USER, "I agree. That's nice."),
    Turn(3, Speaker.SYSTEM, "Shopping takes time."),
)
DEMO_USER = "Window shopping is also fun."
DEMO_CANDIDATE = "It's fun to go shopping with somebody."
DEMO_VERDICT = MonitorVerdict(
    1, 0.97, "The reply says shopping with somebody is fun, which contradicts the "
             "earlier claim that shopping alone is nice.")
DEMO_REWRITE = "It really is. Browsing on your own lets you take your time with every shop window."


def _demo_pipeline(alerts) -> Pipeline:
    return Pipeline(
        assistant=ScriptedBackend(DEMO_CANDIDATE, "llama-3.1-70b"),
        monitor=ScriptedBackend(serialize_verdict(DEMO_VERDICT), "llama-3.1-8b"),
        superior=ScriptedBackend(DEMO_REWRITE, "llama-3.1-405b"),
        policy=EscalationPolicy(),
        alerts=alerts,
    )


def cmd_repair_demo(args: argparse.Namespace) -> int:
    collector = AlertCollector()
    if args.config:
        cfg = load_config(args.config)
        cfg.validate()
        b = build_backends(cfg)
        pipeline = Pipeline(b["assistant"], b["monitor"], b["superior"], cfg.policy,
                            judge=b.get("judge"), params=cfg.params, alerts=collector)
    else:
        pipeline = _demo_pipeline(collector)
    for t in DEMO_HISTORY:
        print(f"{t.index}. {t.speaker.title}: {t.text}")
    outcome = pipeline.run_turn(DEMO_HISTORY, DEMO_USER, dialogue_id="shopping-demo")
    print(f"{outcome.turn_index - 1}. User: {DEMO_USER}")
    print(f"   candidate: {outcome.candidate}")
    v = outcome.verdict
    if v is not None:
        print(f"   monitor:   {'breakdown' if v.label else 'non-breakdown'} "
              f"(confidence {v.confidence:.2f}): {v.justification}")
    print(f"   action:    {outcome.action.kind.value}")
    print(f"{outcome.turn_index}. System: {outcome.final_response}")
    if collector.events:
        print(f"alerts raised: {len(collector.events)}")
    if args.audit:
        Path(args.audit).write_text(audit_log([outcome]), encoding="utf-8")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="breakguard", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse and normalize a dataset manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", help="write normalized JSON here")
    s.add_argument("--validate", action="store_true", help="report invariant violations (exit 2 if any)")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("prompts", help="prompt tools")
    psub = s.add_subparsers(dest="prompts_command", required=True)
    r = psub.add_parser("render", help="render one prompt bundle")
    r.add_argument("--strategy", required=True, choices=ALL_STRATEGIES)
    r.add_argument("--in", dest="input", required=True, help="normalized dataset file")
    r.add_argument("--kind", default="utterance", choices=[k.value for k in DatasetKind])
    r.add_argument("--dialogue", help="dialogue id (default: first)")
    r.add_argument("--turn", type=int, help="system turn index to classify")
    r.add_argument("--pool", help="exemplar dataset file for few-shot strategies")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--analogies", type=int, default=3)
    r.add_argument("--token-cap", type=int, default=2048)
    r.add_argument("--format", choices=("json", "text"), default="json")
    r.set_defaults(func=cmd_prompts_render)

    s = sub.add_parser("evaluate", help="score a monitor on a dataset")
    s.add_argument("--manifest", required=True)
    s.add_argument("--strategy", required=True, choices=ALL_STRATEGIES)
    s.add_argument("--config", required=True, help="backend config (JSON or TOML)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--pool", help="manifest of the exemplar (train) split")
    s.add_argument("--subsample", type=float, help="evaluate this fraction of dialogues")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--analogies", type=int, default=3)
    s.add_argument("--step", type=float, default=0.05, help="threshold sweep step")
    s.add_argument("--mode", choices=[m.value for m in FixtureMode], help="override the config's fixture mode")
    s.add_argument("--fixtures", help="override the config's fixture directory")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="threshold sweep from an evaluate verdicts.jsonl")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--step", type=float, default=0.05)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("cost", help="price a deployment scenario")
    s.add_argument("--scenario", required=True, help="'appendix_a' or a scenario JSON/TOML file")
    s.add_argument("--pricing", help="pricing table (defaults to the bundled Bedrock Llama rates)")
    s.set_defaults(func=cmd_cost)

    s = sub.add_parser("serve", help="run the HTTP gateway")
    s.add_argument("--config", required=True)
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("repair-demo", help="run one detect/escalate/repair turn on a sample dialogue")
    s.add_argument("--config", help="use real backends instead of the scripted trio")
    s.add_argument("--audit", help="write the turn's audit record here")
    s.set_defaults(func=cmd_repair_demo)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FixtureMissError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE_MISS
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (BreakguardError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
