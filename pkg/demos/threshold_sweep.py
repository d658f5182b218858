"""Trading safety for cost by moving the acceptance threshold.

A toy monitor labels a handful of turns. Raising the threshold means fewer
non-breakdown verdicts are trusted, so more turns go to the superior model:
breakdown recall among escalated turns climbs and so does the bill.

    python demos/threshold_sweep.py
"""

from __future__ import annotations

from breakguard import MonitorVerdict, sensitivity_sweep

# (verdict the monitor gave, what annotators decided)
TURNS = [
    (MonitorVerdict(0, 0.95), 0),
    (MonitorVerdict(0, 0.62), 1),  # confident-ish miss
    (MonitorVerdict(1, 0.81), 1),
    (MonitorVerdict(0, 0.88), 0),
    (MonitorVerdict(0, 0.55), 1),
    (MonitorVerdict(1, 0.70), 0),  # false alarm
    (MonitorVerdict(0, 0.99), 0),
]


def main() -> None:
    verdicts = [v for v, _ in TURNS]
    gold = [g for _, g in TURNS]
    thresholds = [i / 10 for i in range(11)]
    print(" T     safety   escalated")
    for p in sensitivity_sweep(verdicts, gold, thresholds):
        bar = "#" * round(p.escalation_rate * 20)
        print(f"{p.threshold:.1f}   {p.safety:6.2f}   {p.escalation_rate:6.2f}  {bar}")
    print("\nBelow 0.5 nothing changes: every verdict is at least that confident.")


if __name__ == "__main__":
    main()
