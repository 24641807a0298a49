"""Cumulative comparator advantage against each adversary, relative to 2C sqrt(T ln Y)."""

from __future__ import annotations

import argparse

from refuel.seeding import make_rng
from refuel.theory import ADVERSARIES, regret_harness


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--actions", type=int, nargs="+", default=[2, 4, 8])
    ap.add_argument("--rounds", type=int, nargs="+", default=[50, 200, 1000])
    ap.add_argument("--bound", type=float, default=1.0, help="advantage magnitude C")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'adversary':<12} {'Y':>3} {'T':>5} {'max sum':>9} {'bound':>9} {'ratio':>6}")
    for name in sorted(ADVERSARIES):
        for y in args.actions:
            for t in args.rounds:
                trace = regret_harness(y, t, args.bound, ADVERSARIES[name](args.bound),
                                       make_rng(args.seed, name, y, t))
                ratio = trace.max_cumulative / trace.bound_value
                print(f"{name:<12} {y:>3} {t:>5} {trace.max_cumulative:9.3f} {trace.bound_value:9.3f} {ratio:6.3f}")


if __name__ == "__main__":
    main()
