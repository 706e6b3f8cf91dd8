"""Reconstruction rates of accurate mechanisms on gadget markets.

Prints, per mechanism, the mean fraction of private bits recovered next to
the lower bound on error that an (epsilon, 0)-private mechanism must pay.

Usage: python3 scripts/attack_demo.py [--bits 50] [--trials 10]
"""

import argparse

import numpy as np

from privalloc.attacks import corrupted_solver, reconstruction_bound, run_attack_experiment
from privalloc.pmatch import PMatchParams


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--bits", type=int, default=50)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--epsilon", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    runs = [
        ("allocation", "exact optimum", "exact_max_matching", None, 1),
        ("allocation", "optimum, 20% moved", corrupted_solver(0.2), None, 1),
        ("prices", "exact-count ascending auction", "kelso_crawford", 0.1, 1),
        ("joint", "private matching auction", "pmatch",
         PMatchParams(0.2, 0.2, args.epsilon, T=10, E=1, m=3), 4),
    ]
    print(f"required error for eps={args.epsilon}: {reconstruction_bound(args.epsilon, 0.0, 0.1):.3f}")
    for variant, label, mech, params, s in runs:
        rows = run_attack_experiment(variant, mech, params, args.trials, args.seed, args.bits, s)
        frac = np.mean([r["reconstructed_fraction"] for r in rows])
        gap = np.mean([r["welfare_gap"] for r in rows])
        print(f"{variant:>10} {label:<32} recovered {frac:.3f}  welfare gap {gap:.2f}")


if __name__ == "__main__":
    main()
