"""Welfare gap of the matching auction as supply grows, with exact counters.

Usage: python3 scripts/welfare_vs_supply.py [--out gap.csv] [--trials 20]
"""

import argparse
import sys

import numpy as np

from privalloc.experiments import ExperimentConfig, summary_columns, sweep, write_rows_csv


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--alpha", type=float, default=0.2)
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--k", type=int, default=4)
    ap.add_argument("--trials", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = ExperimentConfig(
        mode="pmatch",
        instance={"kind": "uniform", "n": args.n, "k": args.k, "s": 2},
        params={"alpha": args.alpha, "rho": args.alpha, "epsilon": 1.0, "noise": "off", "E": 0, "m": 1},
        trials=args.trials,
        seed=args.seed,
    )
    values = [2, 3, 4, 6, 8, 12, 16, 24]
    rows = sweep(cfg, "s", values)
    if args.out:
        write_rows_csv(args.out, rows, summary_columns("pmatch"))
    print(f"{'s':>4} {'mean gap':>10} {'alpha*n':>8}", file=sys.stderr)
    for v in values:
        gaps = [r["gap"] for r in rows if r["value"] == v]
        print(f"{v:>4} {np.mean(gaps):>10.4f} {args.alpha * args.n:>8.2f}", file=sys.stderr)


if __name__ == "__main__":
    main()
