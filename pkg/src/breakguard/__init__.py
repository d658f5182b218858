"""Detect, explain and repair dialogue breakdowns with a tiered set of language models."""

from __future__ import annotations

from .backends import (
    FixtureStore,
    GenerationParams,
    ParseFailure,
    ParseFailureReason,
    RawCompletion,
    RecordingBackend,
    RemoteBackend,
    ReplayBackend,
    ScriptedBackend,
    ScriptedReply,
    complete,
    fingerprint_request,
    judge_recover,
    parse_verdict,
    serialize_verdict,
)
from .core import (
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
from .costing import (
    BEDROCK_LLAMA_PRICING,
    CostBreakdown,
    CostScenario,
    PricingTable,
    dialogue_token_budget,
    measured_cost,
    present,
    savings,
    scenario_cost,
    worked_example_report,
)
from .escalation import (
    ActionKind,
    AlertCollector,
    AlertEmitter,
    AlertEvent,
    EscalationPolicy,
    Pipeline,
    TurnAction,
    TurnOutcome,
    audit_log,
    decide,
    repair,
    run_turn,
)
from .ingest import (
    DatasetKind,
    DatasetManifest,
    consolidate,
    load_dataset,
    parse_betold,
    parse_dbdc5,
    parse_file,
)
from .metrics import (
    CalibrationPair,
    ConfusionMatrix,
    MetricsReport,
    calibration_mse,
    confusion,
    evaluate_run,
    scores,
    sensitivity_sweep,
)
from .prompting import (
    ALL_STRATEGIES,
    PromptBundle,
    Strategy,
    build_exemplar_pool,
    render_conversation_prompt,
    render_prompt,
    select_exemplars,
)

__version__ = "0.1.0"
