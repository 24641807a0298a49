"""Run every method on the covariate-shift instance and print the comparison table."""

from __future__ import annotations

import argparse
from pathlib import Path

from refuel.harness.experiment import compare_methods, load_config

ROOT = Path(__file__).resolve().parent.parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(ROOT / "configs" / "stress.json"))
    ap.add_argument("--seed", type=int)
    ap.add_argument("--output-dir")
    args = ap.parse_args()
    cfg = load_config(args.config, seed=args.seed, output_dir=args.output_dir)
    print(compare_methods(cfg).read_text(), end="")


if __name__ == "__main__":
    main()
