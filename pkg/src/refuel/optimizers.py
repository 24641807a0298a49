"""Policy updates: sampled least-squares regression on relative rewards, its
exact-target and closed-form mirror-descent counterparts, the Fisher
pseudo-inverse route, an unpreconditioned paired-gradient baseline, and the
iteration loop that strings them together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .turn_mdp import TurnMDP, compute_values, policy_table
from .policy import Policy, TabularSoftmaxPolicy, kl_table, pair_predictors
from .rollout import Dataset, OfflineBuffer, collect_dataset, shape_dataset_kl
from .seeding import derive_seed
from .tolerances import DEFAULT_SV_CUTOFF


@dataclass(frozen=True, eq=False)
class UpdateSolution:
    delta: np.ndarray
    next_policy: Policy
    residual: float
    singular_value_cutoff_used: float


@dataclass(frozen=True, eq=False)
class PMDResult:
    next_policy: TabularSoftmaxPolicy
    log_partition: np.ndarray  # ln Z per row of the MDP index


@dataclass(frozen=True)
class IterateMetrics:
    iteration: int
    return_j: float
    kl_to_base: float
    regression_residual: float  # of the update that produced this iterate; nan at t = 0
    gap_to_comparator: float | None = None


@dataclass(frozen=True, eq=False)
class RunResult:
    policies: tuple[Policy, ...]
    metrics: tuple[IterateMetrics, ...]
    config: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def residuals(self) -> np.ndarray:
        return np.array([m.regression_residual for m in self.metrics[1:]])


@dataclass(frozen=True, eq=False)
class FisherEstimate:
    matrix: np.ndarray
    sample_count: int


def _require_data(dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ValueError("empty dataset")


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not eta > 0:
        raise ValueError(f"eta must be positive, got {eta}")
    return eta


# ---------------------------------------------------------------------------
# the regression

def regression_loss(candidate: Policy, reference: Policy, dataset: Dataset, eta: float) -> float:
    """Mean squared error of the scaled log-ratio difference against the reward difference."""
    _require_data(dataset)
    eta = _check_eta(eta)
    rows = reference.index.rows(dataset.state)
    pred = pair_predictors(candidate, reference, rows, dataset.action_a, dataset.action_b) / eta
    return float(np.mean((pred - dataset.reward_diff) ** 2))


def build_design(dataset: Dataset, reference: Policy, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Linear system whose mean squared residual at ``delta`` equals
    ``regression_loss(reference + delta)`` exactly for both parametrizations."""
    _require_data(dataset)
    eta = _check_eta(eta)
    rows = reference.index.rows(dataset.state)
    X = reference.score_differences(rows, dataset.action_a, dataset.action_b) / eta
    return X, dataset.reward_diff.copy()


def minnorm_lstsq(X: np.ndarray, y: np.ndarray, cutoff: float = DEFAULT_SV_CUTOFF) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares solution via truncated SVD.

    Singular values at or below ``cutoff`` times the largest are dropped.
    Returns the solution and the absolute threshold used.
    """
    out = np.zeros(X.shape[1])
    # all-zero columns get exactly zero weight rather than SVD round-off
    active = np.flatnonzero(np.any(X != 0, axis=0))
    if active.size == 0:
        return out, 0.0
    U, sv, Vt = np.linalg.svd(X[:, active], full_matrices=False)
    thresh = cutoff * sv[0]
    keep = sv > thresh
    coef = (U[:, keep].T @ y) / sv[keep]
    out[active] = Vt[keep].T @ coef
    return out, float(thresh)


def solve_update_minnorm(dataset: Dataset, reference: Policy, eta: float,
                         cutoff: float = DEFAULT_SV_CUTOFF) -> UpdateSolution:
    X, y = build_design(dataset, reference, eta)
    delta, thresh = minnorm_lstsq(X, y, cutoff)
    residual = float(np.mean((X @ delta - y) ** 2))
    return UpdateSolution(delta, reference.with_params(reference.params + delta), residual, thresh)


def empirical_fisher(dataset: Dataset, reference: Policy) -> FisherEstimate:
    """Half the mean outer product of paired score differences."""
    _require_data(dataset)
    rows = reference.index.rows(dataset.state)
    D = reference.score_differences(rows, dataset.action_a, dataset.action_b)
    F = D.T @ D / (2 * len(dataset))
    return FisherEstimate(F, len(dataset))


def paired_gradient(dataset: Dataset, reference: Policy) -> np.ndarray:
    """(1/2N) sum of score(y_a)(r_a - r_b) + score(y_b)(r_b - r_a)."""
    _require_data(dataset)
    rows = reference.index.rows(dataset.state)
    ga = reference.score_vectors(rows, dataset.action_a)
    gb = reference.score_vectors(rows, dataset.action_b)
    diff = dataset.reward_diff
    return (ga.T @ diff - gb.T @ diff) / (2 * len(dataset))


def npg_update(dataset: Dataset, reference: Policy, eta: float, cutoff: float = DEFAULT_SV_CUTOFF) -> UpdateSolution:
    """delta = eta * pinv(F_hat) * paired gradient, with ``cutoff`` applied
    relative to the largest eigenvalue of F_hat."""
    eta = _check_eta(eta)
    F = empirical_fisher(dataset, reference).matrix
    g = paired_gradient(dataset, reference)
    Fp = np.linalg.pinv(F, rcond=cutoff, hermitian=True)
    delta = eta * Fp @ g
    X, y = build_design(dataset, reference, eta)
    residual = float(np.mean((X @ delta - y) ** 2))
    lam = np.linalg.eigvalsh(F)
    return UpdateSolution(delta, reference.with_params(reference.params + delta), residual,
                          float(cutoff * max(lam.max(initial=0.0), 0.0)))


def rloo_update(dataset: Dataset, reference: Policy, step: float) -> Policy:
    """Plain step along the paired (leave-one-out style) gradient, no preconditioning."""
    if not step > 0:
        raise ValueError("step must be positive")
    return reference.with_params(reference.params + step * paired_gradient(dataset, reference))


# ---------------------------------------------------------------------------
# exact targets

def _row_weights(mdp: TurnMDP, pi: np.ndarray, occ: np.ndarray) -> np.ndarray:
    """(S, Y, Y) probability of (h, s, y, y') under h uniform, s ~ d_h, y, y' ~ pi."""
    return (occ / mdp.horizon)[:, None, None] * pi[:, :, None] * pi[:, None, :]


def exact_target_update(mdp: TurnMDP, reference: Policy, eta: float,
                        cutoff: float = DEFAULT_SV_CUTOFF) -> UpdateSolution:
    """Solve the regression with true Q differences as targets, every
    (h, s, y, y') weighted by its probability under the on-policy sampler."""
    eta = _check_eta(eta)
    vt = compute_values(mdp, reference)
    pi = policy_table(mdp, reference)
    w = _row_weights(mdp, pi, vt.occupancy_flat)
    S, Y = pi.shape
    row, ya, yb = np.nonzero(w > 0)
    weight = w[row, ya, yb]
    q = vt.q_flat
    prow = reference.index.rows(mdp.state_ids)[row]
    X = reference.score_differences(prow, ya, yb) / eta
    target = q[row, ya] - q[row, yb]
    sw = np.sqrt(weight)
    delta, thresh = minnorm_lstsq(X * sw[:, None], target * sw, cutoff)
    residual = float(np.sum(weight * (X @ delta - target) ** 2))
    return UpdateSolution(delta, reference.with_params(reference.params + delta), residual, thresh)


def pmd_exact(mdp: TurnMDP, reference: Policy, eta: float) -> PMDResult:
    """Closed-form KL-regularized improvement: next proportional to reference * exp(eta Q)."""
    eta = float(eta)
    if eta < 0:
        raise ValueError("eta must be non-negative")
    q = compute_values(mdp, reference).q_flat
    with np.errstate(divide="ignore"):
        log_ref = np.log(policy_table(mdp, reference))
    unnorm = log_ref + eta * q
    log_z = logsumexp(unnorm, axis=1)
    return PMDResult(TabularSoftmaxPolicy(mdp.index, unnorm - log_z[:, None]), log_z)


# ---------------------------------------------------------------------------
# iteration

EtaSpec = float | str | Callable[[int], float]


def lemma3_eta(mdp: TurnMDP, iterations: int) -> float:
    """sqrt(ln Y / (C^2 T)) with C the width of the reward range."""
    C = mdp.reward_span
    if C <= 0 or iterations < 1 or mdp.action_count < 2:
        raise ValueError("lemma3 step needs T >= 1, Y >= 2 and a non-degenerate reward range")
    return math.sqrt(math.log(mdp.action_count) / (C * C * iterations))


def resolve_eta(spec: EtaSpec, mdp: TurnMDP, iterations: int) -> Callable[[int], float]:
    """Turn an eta spec (constant, ``"lemma3"``, or callable of t) into a schedule."""
    if callable(spec):
        return spec
    if isinstance(spec, str):
        if spec != "lemma3":
            raise ValueError(f"unknown eta schedule {spec!r}")
        value = lemma3_eta(mdp, max(iterations, 1))
        return lambda t: value
    value = _check_eta(spec)
    return lambda t: value


def kl_to_base(mdp: TurnMDP, policy: Policy, base: Policy) -> float:
    """Occupancy-weighted KL(policy || base), turns weighted uniformly."""
    d = compute_values(mdp, policy).occupancy_flat
    kl = kl_table(policy_table(mdp, policy), policy_table(mdp, base))
    return float(d @ kl / mdp.horizon)


def greedy_comparator(mdp: TurnMDP, policy: Policy) -> TabularSoftmaxPolicy:
    return TabularSoftmaxPolicy.greedy(mdp.index, compute_values(mdp, policy).q_flat)


Updater = Callable[[int, Policy], tuple[Policy, float]]


def run_loop(mdp: TurnMDP, initial: Policy, iterations: int, update: Updater,
             comparator: Policy | None = None, config: dict | None = None, seed: int = 0) -> RunResult:
    """Generic iteration driver; ``update(t, policy)`` returns (next policy, residual).

    Without a fixed ``comparator`` the gap is measured against the greedy
    policy for the exact Q of the best iterate seen so far.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    policies = [initial]
    residuals = [math.nan]
    for t in range(iterations):
        nxt, res = update(t, policies[-1])
        policies.append(nxt)
        residuals.append(float(res))
    metrics = []
    best_j, best = -math.inf, None
    for t, (p, res) in enumerate(zip(policies, residuals)):
        j = compute_values(mdp, p).j
        if comparator is not None:
            gap = compute_values(mdp, comparator).j - j
        else:
            if j > best_j:
                best_j, best = j, p
            gap = compute_values(mdp, greedy_comparator(mdp, best)).j - j
        metrics.append(IterateMetrics(t, j, kl_to_base(mdp, p, initial), res, gap))
    return RunResult(tuple(policies), tuple(metrics), dict(config or {}), seed)


def refuel_iterate(
    mdp: TurnMDP,
    initial: Policy,
    iterations: int,
    eta: EtaSpec,
    n: int = 1000,
    scheme: str = "refuel",
    offline: OfflineBuffer | None = None,
    seed: int = 0,
    comparator: Policy | None = None,
    gamma: float = 0.0,
    cutoff: float = DEFAULT_SV_CUTOFF,
) -> RunResult:
    """Collect, regress, repeat.

    ``scheme`` is any dataset scheme, or ``"exact"`` to regress on true Q
    differences (zero statistical error). ``gamma`` > 0 applies the KL reward
    shaping against ``initial`` before each regression.
    """
    schedule = resolve_eta(eta, mdp, iterations)

    def update(t: int, policy: Policy) -> tuple[Policy, float]:
        step = schedule(t)
        if scheme == "exact":
            sol = exact_target_update(mdp, policy, step, cutoff)
        else:
            data = collect_dataset(mdp, policy, n, scheme, offline, derive_seed(seed, "iteration", t))
            data = shape_dataset_kl(data, policy, initial, gamma)
            sol = solve_update_minnorm(data, policy, step, cutoff)
        return sol.next_policy, sol.residual

    config = {"iterations": iterations, "eta": eta if not callable(eta) else "callable", "n": n,
              "scheme": scheme, "gamma": gamma, "cutoff": cutoff}
    return run_loop(mdp, initial, iterations, update, comparator, config, seed)


def rloo_iterate(mdp: TurnMDP, initial: Policy, iterations: int, step: EtaSpec, n: int = 1000,
                 seed: int = 0, comparator: Policy | None = None, gamma: float = 0.0) -> RunResult:
    schedule = resolve_eta(step, mdp, iterations)

    def update(t: int, policy: Policy) -> tuple[Policy, float]:
        data = collect_dataset(mdp, policy, n, "refuel", None, derive_seed(seed, "iteration", t))
        data = shape_dataset_kl(data, policy, initial, gamma)
        nxt = rloo_update(data, policy, schedule(t))
        return nxt, regression_loss(nxt, policy, data, schedule(t))

    config = {"iterations": iterations, "step": step if not callable(step) else "callable", "n": n, "gamma": gamma}
    return run_loop(mdp, initial, iterations, update, comparator, config, seed)


def pmd_iterate(mdp: TurnMDP, initial: Policy, iterations: int, eta: EtaSpec,
                comparator: Policy | None = None) -> RunResult:
    schedule = resolve_eta(eta, mdp, iterations)
    start = TabularSoftmaxPolicy(mdp.index, np.log(policy_table(mdp, initial)))

    def update(t: int, policy: Policy) -> tuple[Policy, float]:
        return pmd_exact(mdp, policy, schedule(t)).next_policy, 0.0

    config = {"iterations": iterations, "eta": eta if not callable(eta) else "callable"}
    return run_loop(mdp, start, iterations, update, comparator, config)


def last_turn_update(mdp: TurnMDP, reference: Policy, eta: float, scheme: str,
                     buffer: OfflineBuffer | None, n: int, rng: np.random.Generator | int,
                     cutoff: float = DEFAULT_SV_CUTOFF) -> UpdateSolution:
    """One single-turn-style update: only turn-H records are regressed."""
    if scheme not in ("lt-offline", "lt-mixed", "lt-online"):
        raise ValueError(f"{scheme!r} is not a last-turn scheme")
    data = collect_dataset(mdp, reference, n, scheme, buffer, rng)
    return solve_update_minnorm(data, reference, eta, cutoff)



def optimal_policy(mdp: TurnMDP) -> TabularSoftmaxPolicy:
    """Deterministic optimal policy; H rounds of greedy improvement suffice
    because each round fixes one more turn counting back from the last."""
    p: Policy = TabularSoftmaxPolicy.uniform(mdp.index, mdp.action_count)
    for _ in range(mdp.horizon):
        p = greedy_comparator(mdp, p)
    return p
