"""The theory check suite behind ``refuel check``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..turn_mdp import TurnMDP
from ..optimizers import exact_target_update, pmd_exact
from ..policy import FeatureMap, LogLinearPolicy, TabularSoftmaxPolicy
from ..rollout import collect_dataset
from ..seeding import derive_seed, make_rng
from ..theory import (
    ADVERSARIES,
    apc_error,
    check_fisher_unbiased,
    check_minnorm_claim,
    check_performance_difference,
    check_regression_variance_identity,
    prop2_counterexample,
    regret_harness,
)
from ..tolerances import ALGEBRAIC_TOL, ORACLE_TOL
from .instances import gen_random_mdp


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    measured: dict
    tolerance: dict
    seed: int
    notes: str = ""

    def as_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "measured": self.measured,
                "tolerance": self.tolerance, "seed": self.seed, "notes": self.notes}


def random_instance(seed: int, max_h: int = 4, max_states: int = 5, max_actions: int = 4) -> TurnMDP:
    rng = make_rng(seed, "random_instance")
    n = int(rng.integers(1, max_states + 1))
    return gen_random_mdp(
        horizon=int(rng.integers(1, max_h + 1)),
        states_per_turn=n,
        actions=int(rng.integers(2, max_actions + 1)),
        branching=int(rng.integers(1, n + 1)),
        seed=seed,
    )


def random_tabular(mdp: TurnMDP, seed: int, scale: float = 1.0) -> TabularSoftmaxPolicy:
    rng = make_rng(seed, "random_tabular")
    return TabularSoftmaxPolicy(mdp.index, scale * rng.normal(size=(mdp.n_states, mdp.action_count)))


def random_loglinear(mdp: TurnMDP, seed: int, dim: int = 3) -> LogLinearPolicy:
    rng = make_rng(seed, "random_loglinear")
    feats = FeatureMap(mdp.index, rng.normal(size=(mdp.n_states, mdp.action_count, dim)))
    return LogLinearPolicy(feats, rng.normal(size=dim))


def tv_per_state(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(a - b).sum(axis=1)


# ---------------------------------------------------------------------------

def check_prop2(seed: int) -> CheckResult:
    q, apc = prop2_counterexample()
    ok = abs(q - 1.0) <= ALGEBRAIC_TOL and apc <= ALGEBRAIC_TOL
    return CheckResult("prop2_counterexample", ok, {"q_error": q, "apc_error": apc},
                       {"q_error_abs": ALGEBRAIC_TOL, "apc_error_max": ALGEBRAIC_TOL}, seed)


def check_pdl(seed: int, count: int = 100) -> CheckResult:
    worst = 0.0
    for k in range(count):
        s = derive_seed(seed, "pdl", k)
        mdp = random_instance(s)
        worst = max(worst, check_performance_difference(mdp, random_tabular(mdp, s), random_tabular(mdp, s + 1)))
    return CheckResult("performance_difference", worst < ORACLE_TOL, {"max_residual": worst, "instances": count},
                       {"max_residual": ORACLE_TOL}, seed)


def exact_vs_pmd_tv(mdp: TurnMDP, policy: TabularSoftmaxPolicy, eta: float) -> float:
    a = exact_target_update(mdp, policy, eta).next_policy.probs_table()
    b = pmd_exact(mdp, policy, eta).next_policy.probs_table()
    return float(tv_per_state(a, b).max())


def check_exact_equals_pmd(seed: int, count: int = 50, etas: tuple[float, ...] = (0.1, 1.0, 10.0)) -> CheckResult:
    worst = 0.0
    for k in range(count):
        s = derive_seed(seed, "exact-pmd", k)
        mdp = random_instance(s)
        pi = random_tabular(mdp, s)
        for eta in etas:
            worst = max(worst, exact_vs_pmd_tv(mdp, pi, eta))
    return CheckResult("exact_target_equals_pmd", worst < 1e-8, {"max_tv": worst, "instances": count, "etas": list(etas)},
                       {"max_tv": 1e-8}, seed)


def check_fisher(seed: int, n: int = 10_000, trials: int = 50) -> CheckResult:
    mdp = gen_random_mdp(2, 2, 2, 2, seed=derive_seed(seed, "fisher-mdp"))
    res = check_fisher_unbiased(mdp, random_tabular(mdp, seed, 0.5), n, trials, seed)
    return CheckResult("fisher_unbiased", res.max_standardized_deviation < 4.0,
                       {"max_z": res.max_standardized_deviation, "n": n, "trials": trials},
                       {"max_z": 4.0}, seed)


def check_minnorm(seed: int, count: int = 50) -> CheckResult:
    worst = 0.0
    for k in range(count):
        s = derive_seed(seed, "minnorm", k)
        mdp = random_instance(s, max_h=3)
        pi = random_tabular(mdp, s) if k % 2 else random_loglinear(mdp, s)
        n = int(make_rng(s, "n").integers(1, 200))
        data = collect_dataset(mdp, pi, n, "refuel", None, s)
        worst = max(worst, check_minnorm_claim(data, pi, 0.5 + k % 3))
    return CheckResult("minnorm_claim", worst < 1e-8, {"max_discrepancy": worst, "datasets": count},
                       {"max_discrepancy": 1e-8}, seed)


def check_regret(seed: int, count: int = 20, ys: tuple[int, ...] = (2, 4, 8), ts: tuple[int, ...] = (50, 200)) -> CheckResult:
    kinds = sorted(ADVERSARIES)
    violations, worst_ratio, runs = 0, 0.0, 0
    for k in range(count):
        kind = kinds[k % len(kinds)]
        for y in ys:
            for t in ts:
                rng = make_rng(seed, "regret", k, y, t)
                trace = regret_harness(y, t, 1.0, ADVERSARIES[kind](1.0), rng, n_states=2)
                violations += not trace.passed
                worst_ratio = max(worst_ratio, trace.max_cumulative / trace.bound_value)
                runs += 1
    return CheckResult("mirror_descent_regret", violations == 0,
                       {"violations": violations, "runs": runs, "max_sum_over_bound": worst_ratio},
                       {"violations": 0}, seed)


def check_variance_identity(seed: int, count: int = 20, n: int = 100_000) -> CheckResult:
    worst, worst_z = 0.0, 0.0
    for k in range(count):
        s = derive_seed(seed, "variance", k)
        mdp = random_instance(s)
        rep = check_regression_variance_identity(mdp, random_tabular(mdp, s), n, s)
        worst = max(worst, rep.exact_deviation)
        worst_z = max(worst_z, rep.mc_standardized_deviation)
    # max over 20 standardized deviations; 4 sigma each
    return CheckResult("paired_variance_identity", worst <= ALGEBRAIC_TOL and worst_z < 4.0,
                       {"max_exact_deviation": worst, "max_mc_z": worst_z, "instances": count},
                       {"max_exact_deviation": ALGEBRAIC_TOL, "max_mc_z": 4.0}, seed)


def check_apc_nesting(seed: int, count: int = 20) -> CheckResult:
    worst = -math.inf
    for k in range(count):
        s = derive_seed(seed, "apc", k)
        mdp = random_instance(s, max_h=3)
        rep = apc_error(mdp, random_loglinear(mdp, s, dim=2), 1.0)
        worst = max(worst, rep.apc_error - min(rep.q_approx_error, rep.advantage_error))
    return CheckResult("apc_nesting", worst <= ORACLE_TOL,
                       {"max_apc_minus_min_other": worst, "instances": count},
                       {"slack": ORACLE_TOL}, seed)


CHECKS: dict[str, Callable[[int], CheckResult]] = {
    "prop2_counterexample": check_prop2,
    "performance_difference": check_pdl,
    "exact_target_equals_pmd": check_exact_equals_pmd,
    "fisher_unbiased": check_fisher,
    "minnorm_claim": check_minnorm,
    "mirror_descent_regret": check_regret,
    "paired_variance_identity": check_variance_identity,
    "apc_nesting": check_apc_nesting,
}


def run_suite(seed: int = 0, only: list[str] | None = None) -> dict:
    names = list(CHECKS) if not only else only
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks {unknown}")
    results = [CHECKS[n](derive_seed(seed, "check", n)).as_dict() for n in names]
    return {"seed": seed, "passed": all(r["passed"] for r in results), "checks": results}
