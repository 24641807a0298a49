"""Command line entry point: ``refuel {check,gen-mdp,run,compare}``.

Exit codes: 0 success, 1 a check failed, 2 bad configuration or arguments,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..turn_mdp import MDPValidationError, mdp_to_dict
from ..policy import policy_to_dict
from .experiment import (
    ConfigError,
    MissingArtifacts,
    compare_methods,
    load_config,
    run_experiment,
)
from .instances import gen_covariate_shift_mdp, gen_random_mdp
from .suite import CHECKS, run_suite

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def cmd_check(args) -> int:
    report = run_suite(args.seed if args.seed is not None else 0, args.only)
    _write(_dumps(report), args.out)
    for r in report["checks"]:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['name']}", file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_CHECK


def cmd_gen_mdp(args) -> int:
    seed = args.seed if args.seed is not None else 0
    if args.kind == "covariate-shift":
        mdp, ref = gen_covariate_shift_mdp(seed)
        if args.policy_out:
            _write(_dumps(policy_to_dict(ref)), args.policy_out)
    else:
        mdp = gen_random_mdp(args.horizon, args.states, args.actions, args.branching,
                             (args.reward_low, args.reward_high), seed)
    _write(_dumps(mdp_to_dict(mdp)), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.seed, args.output_dir)
    dirs = run_experiment(cfg)
    for method, d in dirs.items():
        print(f"{method}: {d}")
    return EXIT_OK


def cmd_compare(args) -> int:
    src = Path(args.source)
    if src.is_dir():
        path = compare_methods(src)
    else:
        path = compare_methods(load_config(src, args.seed, args.output_dir))
    sys.stdout.write(path.read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="refuel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("check", help="run the theory check suite and emit a JSON report")
    c.add_argument("--seed", type=int)
    c.add_argument("--out", help="report path (default stdout)")
    c.add_argument("--only", nargs="+", choices=sorted(CHECKS), help="run a subset of checks")
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("gen-mdp", help="emit a generated MDP as JSON")
    g.add_argument("--kind", choices=("random", "covariate-shift"), default="random")
    g.add_argument("--horizon", type=int, default=3)
    g.add_argument("--states", type=int, default=3)
    g.add_argument("--actions", type=int, default=2)
    g.add_argument("--branching", type=int, default=2)
    g.add_argument("--reward-low", type=float, default=0.0)
    g.add_argument("--reward-high", type=float, default=1.0)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="MDP path (default stdout)")
    g.add_argument("--policy-out", help="where to write the reference policy (covariate-shift only)")
    g.set_defaults(func=cmd_gen_mdp)

    for name, func, helptext in (("run", cmd_run, "run every method in a config"),
                                 ("compare", cmd_compare, "write the method comparison table")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("config" if name == "run" else "source",
                       help="JSON config" + (" or a previous output directory" if name == "compare" else ""))
        r.add_argument("--seed", type=int, help="override the config's master seed")
        r.add_argument("--output-dir", help="override the output directory (also REFUEL_OUTPUT_DIR)")
        r.set_defaults(func=func)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, MDPValidationError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifacts, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
