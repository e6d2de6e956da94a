"""Run every config in scripts/configs (or the ones named) and print summaries.

    python3 scripts/run_experiments.py                 # all of them
    python3 scripts/run_experiments.py table1 noise_sweep
"""

import sys
from pathlib import Path

from qdiversity.harness.cli import main

CONFIGS = Path(__file__).parent / "configs"


def run(names):
    status = 0
    for name in names:
        cfg = CONFIGS / f"{name}.cfg"
        print(f"== {name}")
        status |= main(["experiment", "--config", str(cfg)])
    return status


if __name__ == "__main__":
    names = sys.argv[1:] or sorted(p.stem for p in CONFIGS.glob("*.cfg"))
    sys.exit(run(names))
