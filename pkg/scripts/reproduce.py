"""Regenerate every figure dataset and verification report into one directory.

    python3 scripts/reproduce.py --out results/ [--paths 100000] [--workers 4]

Each step is a call to the ``periodic-bailout`` CLI with ``--check``; the
script stops at the first step whose assertions fail.
"""

import argparse
import sys
import time
from pathlib import Path

from periodic_bailout.cli import main


def steps(paths: int, workers: int):
    w = ["--workers", str(workers)]
    for case in ("case1", "case2"):
        yield [f"{case}_solve", "solve", "--preset", case]
        yield [f"{case}_g_curve", "g-curve", "--preset", case]
        yield [f"{case}_value_curves", "value", "--preset", case]
        yield [f"{case}_beta_sweep", "sweep-beta", "--preset", case, *w]
        yield [f"{case}_r_sweep", "sweep-r", "--preset", case, *w]
        yield [f"{case}_vi_report", "vi-check", "--preset", case]
        yield [f"{case}_mc_report", "simulate", "--preset", case, "--paths", str(paths), *w]


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, *cmd in steps(args.paths, args.workers):
        t0 = time.perf_counter()
        code = main([*cmd, "--check", "--out", str(out / f"{name}.csv")])
        print(f"{name:22s} exit {code}  {time.perf_counter() - t0:6.1f}s")
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
