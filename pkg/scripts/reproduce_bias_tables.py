#!/usr/bin/env python3
"""Replicate the bias/RMSE studies: all estimators on the three-factor
scenarios and the two headline estimators on the five-factor scenario.

Writes one CSV per (scenario, outcome) into --out-dir.
"""

import argparse
from pathlib import Path

from factorbal.simulation import Scenario, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=20260809)
    ap.add_argument("--n-three", type=int, default=1000)
    ap.add_argument("--n-five", type=int, default=2000)
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    for outcome in ("Y1", "Y2", "Y3"):
        sc = Scenario("three_factor", args.n_three, outcome, seed=args.seed)
        rep = run_study(sc, args.reps, parallelism=args.threads)
        dest = out / f"three_factor_{outcome}_bias.csv"
        rep.to_csv(dest)
        print(f"{dest}  ({rep.wall_time:.0f}s)")

    for outcome in ("Y1", "Y2"):
        sc = Scenario("five_factor", args.n_five, outcome, seed=args.seed)
        rep = run_study(
            sc,
            args.reps,
            estimators=("regression", "weighting_interaction"),
            parallelism=args.threads,
        )
        dest = out / f"five_factor_{outcome}_bias.csv"
        rep.to_csv(dest)
        print(f"{dest}  ({rep.wall_time:.0f}s)")


if __name__ == "__main__":
    main()
