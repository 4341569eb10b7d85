#!/usr/bin/env python3
"""Score the demo corpus under several strategy sets and print a table.

Everything runs against the gold-scripted mock backend, so the run is
free, offline, and deterministic. The point is exercising the whole
stack (composition, budgets, pipeline, scoring), not comparing model
quality: with scripted outputs every strategy scores the same.

    python3 scripts/run_demo_eval.py
"""

from __future__ import annotations

from npcforge.metrics import DISPLAY_NAMES
from npcforge.runner import RunConfig, run_eval

GRID: dict[str, tuple[str, ...]] = {
    "defaults (track api)": None,
    "zero-shot only": (),
    "D": ("D",),
    "D+RW": ("D", "RW"),
    "D+RW+F": ("D", "RW", "F"),
    "CoT+DefineFunction": ("CoT", "DefineFunction"),
}


def main() -> None:
    names = ["acc_name", "acc_args", "bleu4", "word_f1", "embed_f1"]
    header = "strategy set".ljust(22) + "".join(n.rjust(10) for n in names) + "  aggregate"
    print(header)
    print("-" * len(header))
    for label, strategies in GRID.items():
        config = RunConfig(strategies=strategies, workers=1)
        report = run_eval(config)
        cells = "".join(f"{report.corpus[n]:>10.3f}" for n in names)
        print(label.ljust(22) + cells + f"  {report.aggregate:>9.3f}")
    print()
    print("metric display names:")
    for key in names:
        print(f"  {key:<10} {DISPLAY_NAMES[key]}")


if __name__ == "__main__":
    main()
