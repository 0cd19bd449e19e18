"""Run every experiment config under configs/ through the CLI.

    python3 scripts/run_experiments.py                 # all configs
    python3 scripts/run_experiments.py rates lowerbound
"""

import json
import sys
import time
from pathlib import Path

from wermlab.cli import run

ROOT = Path(__file__).resolve().parent.parent


def main(names):
    paths = sorted((ROOT / "configs").glob("*.json"))
    if names:
        paths = [p for p in paths if p.stem in names]
    failed = []
    for p in paths:
        cmd = json.loads(p.read_text())["command"]
        t = time.time()
        print(f"== {p.stem} ({cmd})", flush=True)
        code = run([cmd, "--config", str(p), "--out", str(ROOT / "results" / p.stem)])
        print(f"== {p.stem}: exit {code} in {time.time() - t:.0f}s", flush=True)
        if code:
            failed.append(p.stem)
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
