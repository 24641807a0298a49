"""Error of the sampled least-squares update against its exact-target counterpart as N grows."""

from __future__ import annotations

import argparse

import numpy as np

from refuel.harness.instances import gen_random_mdp
from refuel.harness.suite import random_tabular
from refuel.optimizers import exact_target_update, solve_update_minnorm
from refuel.rollout import collect_dataset
from refuel.seeding import derive_seed


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 1_000, 10_000])
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--eta", type=float, default=1.0)
    args = ap.parse_args()

    sizes = np.array(args.sizes)
    for seed in range(args.seeds):
        mdp = gen_random_mdp(3, 3, 3, 2, seed=seed)
        pi = random_tabular(mdp, seed, 0.5)
        target = exact_target_update(mdp, pi, args.eta).delta
        rms = []
        for n in sizes:
            sq = [np.sum((solve_update_minnorm(collect_dataset(mdp, pi, int(n), "refuel", None,
                                                               derive_seed(seed, int(n), r)), pi, args.eta).delta
                          - target) ** 2) for r in range(args.replicates)]
            rms.append(float(np.sqrt(np.mean(sq))))
        slope = np.polyfit(np.log(sizes), np.log(rms), 1)[0]
        print(f"seed {seed}: " + "  ".join(f"N={n}: {e:.4g}" for n, e in zip(sizes, rms)) + f"  slope {slope:.3f}")


if __name__ == "__main__":
    main()
