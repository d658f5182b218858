"""One short dialogue through assistant, monitor and superior, all scripted.

The second assistant reply contradicts what the system said a turn earlier.
The monitor flags it with high confidence, the superior rewrites it using the
monitor's explanation, and an alert lands in an in-memory collector.

    python demos/repair_pipeline.py
"""

from __future__ import annotations

import json

from breakguard import (
    BEDROCK_LLAMA_PRICING,
    AlertCollector,
    MonitorVerdict,
    Pipeline,
    ScriptedBackend,
    measured_cost,
    present,
    serialize_verdict,
)

USER = ["I'm planning a trip next month.", "I really can't stand hot weather.", "Sounds good, thanks!"]

assistant = ScriptedBackend([
    "Nice! Where are you thinking of going?",
    "Then a week on a sunny tropical beach is perfect for you.",
    "Have a great trip!",
], "llama-3.1-70b")

monitor = ScriptedBackend([
    serialize_verdict(MonitorVerdict(0, 0.93, "A natural follow-up question.")),
    serialize_verdict(MonitorVerdict(1, 0.97, "Suggests a hot destination right after the user said they dislike heat")),
    serialize_verdict(MonitorVerdict(0, 0.90, "Polite closing.")),
], "llama-3.1-8b")

superior = ScriptedBackend("Then somewhere cool could suit you, maybe the Scottish Highlands or Norway's fjords.",
                           "llama-3.1-405b")


def main() -> None:
    alerts = AlertCollector()
    pipeline = Pipeline(assistant, monitor, superior, alerts=alerts)
    outcomes = pipeline.run_dialogue(USER, dialogue_id="trip")

    for o in outcomes:
        print(f"User:   {o.user_utterance}")
        if o.escalated:
            print(f"        (draft rejected: {o.candidate})")
            print(f"        (reason: {o.verdict.justification})")
        print(f"System: {o.final_response}\n")

    print("superior prompt:\n" + superior.calls[0].text + "\n")
    print("alerts:", json.dumps([e.to_dict() for e in alerts.events], indent=2))
    print(f"cost: ${present(measured_cost(outcomes, BEDROCK_LLAMA_PRICING).total)}")


if __name__ == "__main__":
    main()
