"""Print what the monitor actually sees under each prompting strategy.

Uses the small DBDC-style sample in tests/data as the exemplar pool.

    python demos/render_prompts.py [STRATEGY ...]
"""

from __future__ import annotations

import sys
from pathlib import Path

from breakguard import (
    ALL_STRATEGIES,
    DatasetKind,
    Strategy,
    build_exemplar_pool,
    parse_file,
    render_prompt,
    select_exemplars,
)

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def main(names: list[str]) -> None:
    pool = build_exemplar_pool(parse_file(DATA / "dbdc_train.json", DatasetKind.UTTERANCE_LEVEL))
    dialogue = parse_file(DATA / "dbdc_eval.json", DatasetKind.UTTERANCE_LEVEL)[0]
    history, target = dialogue.turns[:3], dialogue.turns[3]
    for name in names or ALL_STRATEGIES:
        s = Strategy.parse(name)
        exemplars = select_exemplars(pool, s, seed=0) if s.shots else []
        bundle = render_prompt(history, target, s, exemplars)
        print(f"===== {name} (~{bundle.estimated_tokens} tokens) =====")
        print(bundle.text, end="\n\n")


if __name__ == "__main__":
    main(sys.argv[1:])
