"""Executable checks of the analytical claims behind the regression update.

Each check computes both sides of an identity or inequality from independent
routes (dynamic programming, enumeration, Monte Carlo, closed forms) and
returns the measured discrepancy; callers decide pass/fail against the
tolerances in :mod:`refuel.tolerances`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .indexing import StateIndex
from .turn_mdp import CoverageReport, TurnMDP, compute_values, concentrability, policy_table, validate
from .optimizers import RunResult, empirical_fisher, minnorm_lstsq, npg_update, solve_update_minnorm
from .policy import FeatureMap, LogLinearPolicy, Policy
from .rollout import Dataset, collect_dataset
from .seeding import derive_seed
from .tolerances import ALGEBRAIC_TOL, DEFAULT_SV_CUTOFF


def _aligned_rows(mdp: TurnMDP, policy: Policy) -> np.ndarray:
    return np.arange(mdp.n_states) if policy.index == mdp.index else policy.index.rows(mdp.state_ids)


def _all_scores(mdp: TurnMDP, policy: Policy) -> np.ndarray:
    """(S, Y, P) score vectors for every (row, action) of the MDP."""
    S, Y = mdp.n_states, mdp.action_count
    rows = np.repeat(_aligned_rows(mdp, policy), Y)
    acts = np.tile(np.arange(Y), S)
    return policy.score_vectors(rows, acts).reshape(S, Y, -1)


# ---------------------------------------------------------------------------
# performance difference

def check_performance_difference(mdp: TurnMDP, pi: Policy, pi_prime: Policy) -> float:
    """|J(pi') - J(pi) - sum_h E_{d^{pi'}_h, pi'}[A^pi_h]|."""
    base = compute_values(mdp, pi)
    other = compute_values(mdp, pi_prime)
    p2 = policy_table(mdp, pi_prime)
    total = sum(float(d @ np.einsum("sy,sy->s", p2[mdp.turn_rows(h)], a))
                for h, (d, a) in enumerate(zip(other.occupancy, base.adv), start=1))
    return abs(other.j - base.j - total)


def exact_policy_gradient(mdp: TurnMDP, policy: Policy) -> np.ndarray:
    """grad J = sum_h E_{s ~ d_h, y ~ pi}[score(s, y) Q_h(s, y)]."""
    vt = compute_values(mdp, policy)
    pi = policy_table(mdp, policy)
    w = vt.occupancy_flat[:, None] * pi * vt.q_flat
    return np.einsum("sy,syp->p", w, _all_scores(mdp, policy))


# ---------------------------------------------------------------------------
# Fisher information

def exact_fisher(mdp: TurnMDP, policy: Policy) -> np.ndarray:
    """E[score score^T] under h uniform, s ~ d_h, y ~ pi."""
    d = compute_values(mdp, policy).occupancy_flat / mdp.horizon
    w = d[:, None] * policy_table(mdp, policy)
    G = _all_scores(mdp, policy)
    return np.einsum("sy,syp,syq->pq", w, G, G)


@dataclass(frozen=True, eq=False)
class FisherCheck:
    exact: np.ndarray
    mean: np.ndarray
    standard_error: np.ndarray
    max_standardized_deviation: float
    trials: int
    n: int


def check_fisher_unbiased(mdp: TurnMDP, policy: Policy, n: int, trials: int, seed: int = 0) -> FisherCheck:
    """Average ``trials`` independent paired-sample Fisher estimates and compare
    each entry with :func:`exact_fisher` in units of its standard error.

    Entries whose estimates never vary must match the exact value to 1e-12,
    otherwise they count as an infinite deviation.
    """
    if n < 2 or trials < 2:
        raise ValueError("need n >= 2 and trials >= 2")
    est = np.stack([
        empirical_fisher(collect_dataset(mdp, policy, n, "refuel", None, derive_seed(seed, "fisher", k)), policy).matrix
        for k in range(trials)
    ])
    exact = exact_fisher(mdp, policy)
    mean = est.mean(axis=0)
    se = est.std(axis=0, ddof=1) / math.sqrt(trials)
    dev = np.abs(mean - exact)
    z = np.where(se > 0, dev / np.where(se > 0, se, 1.0), np.where(dev <= 1e-12, 0.0, np.inf))
    return FisherCheck(exact, mean, se, float(z.max()), trials, n)


def claim1_delta(dataset: Dataset, policy: Policy, eta: float, cutoff: float = DEFAULT_SV_CUTOFF) -> np.ndarray:
    return npg_update(dataset, policy, eta, cutoff).delta


def check_minnorm_claim(dataset: Dataset, policy: Policy, eta: float, cutoff: float = DEFAULT_SV_CUTOFF) -> float:
    """Largest coordinate gap between the SVD min-norm solution and eta F^+ g."""
    a = solve_update_minnorm(dataset, policy, eta, cutoff).delta
    b = claim1_delta(dataset, policy, eta, cutoff)
    return float(np.max(np.abs(a - b))) if a.size else 0.0


# ---------------------------------------------------------------------------
# policy completeness

@dataclass(frozen=True, eq=False)
class APCReport:
    q_approx_error: float
    advantage_error: float
    apc_error: float
    best_w: np.ndarray
    best_state_offsets: np.ndarray  # g(s) per MDP row
    witness: LogLinearPolicy  # weights theta + eta * best_w
    witness_log_c: np.ndarray  # ln C(s) per MDP row realizing apc_error


def _weighted_fit(design: np.ndarray, target: np.ndarray, weight: np.ndarray) -> tuple[np.ndarray, float]:
    sw = np.sqrt(weight)
    coef, _ = minnorm_lstsq(design * sw[:, None], target * sw, 1e-13)
    return coef, float(np.sum(weight * (design @ coef - target) ** 2))


def apc_definition_objective(mdp: TurnMDP, policy: Policy, candidate: Policy, log_c: np.ndarray, eta: float) -> float:
    """E[((1/eta) ln pi'(y|s) - (1/eta) ln(pi(y|s) exp(eta Q) / C(s)))^2]
    under h uniform, s ~ d_h^pi, y ~ pi; ``log_c`` is ln C per MDP row."""
    vt = compute_values(mdp, policy)
    pi = policy_table(mdp, policy)
    with np.errstate(divide="ignore"):
        lp = np.log(pi)
        lc = np.log(policy_table(mdp, candidate))
    inner = (lc - (lp + eta * vt.q_flat - np.asarray(log_c)[:, None])) / eta
    w = (vt.occupancy_flat / mdp.horizon)[:, None] * pi
    live = w > 0
    return float(np.sum(w[live] * inner[live] ** 2))


def apc_error(mdp: TurnMDP, policy: LogLinearPolicy, eta: float) -> APCReport:
    """Weighted least-squares fits of Q by w.phi (+ a free per-state offset,
    or + V) under h uniform, s ~ d_h, y ~ pi."""
    if not isinstance(policy, LogLinearPolicy):
        raise TypeError("apc_error needs a log-linear policy")
    vt = compute_values(mdp, policy)
    pi = policy_table(mdp, policy)
    S, Y = pi.shape
    phi = policy.features.table[_aligned_rows(mdp, policy)]  # (S, Y, d)
    d = phi.shape[2]
    weight = ((vt.occupancy_flat / mdp.horizon)[:, None] * pi).ravel()
    live = weight > 0
    rows = np.repeat(np.arange(S), Y)[live]
    Phi = phi.reshape(S * Y, d)[live]
    q = vt.q_flat.ravel()[live]
    adv = vt.adv_flat.ravel()[live]
    wl = weight[live]

    _, q_err = _weighted_fit(Phi, q, wl)
    _, a_err = _weighted_fit(Phi, adv, wl)
    onehot = np.zeros((rows.size, S))
    onehot[np.arange(rows.size), rows] = 1.0
    coef, apc = _weighted_fit(np.hstack([Phi, onehot]), q, wl)
    best_w, offsets = coef[:d], coef[d:]

    witness = LogLinearPolicy(policy.features, policy.weights + eta * best_w)
    # ln C(s) = ln Z'(s) + eta g(s), with Z' the normalizer of pi exp(eta w.phi)
    log_z = np.log(np.sum(pi * np.exp(eta * (phi @ best_w)), axis=1))
    return APCReport(q_err, a_err, apc, best_w, offsets, witness, log_z + eta * offsets)


PROP2_FEATURES = np.array([[1.0, -1.0], [-1.0, 1.0]])


def prop2_instance() -> tuple[TurnMDP, LogLinearPolicy]:
    """One-state two-action bandit with equal unit rewards and features
    [1, -1], [-1, 1]; the policy is uniform (weights [1, 1])."""
    mdp = validate(TurnMDP(
        horizon=1, states_per_turn=((0,),), action_count=2, initial_dist=np.array([1.0]),
        transition=(), terminal_reward=np.array([[1.0, 1.0]]), reward_range=(0.0, 1.0),
    ))
    features = FeatureMap(StateIndex([0]), PROP2_FEATURES[None, :, :])
    return mdp, LogLinearPolicy(features, np.array([1.0, 1.0]))


def prop2_counterexample(eta: float = 1.0) -> tuple[float, float]:
    """(Q-fit error, APC error) on :func:`prop2_instance`.

    The Q-fit error is the weighted normal-equation minimum of
    E[(r(y) - w.phi(y))^2]; the APC error is the definition's objective at
    pi' = pi, C = exp(eta).
    """
    mdp, pi = prop2_instance()
    probs = pi.probs_table()[0]
    phi = PROP2_FEATURES
    r = mdp.terminal_reward[0]
    A = phi.T @ (probs[:, None] * phi)
    b = phi.T @ (probs * r)
    w = np.linalg.lstsq(A, b, rcond=None)[0]
    q_error = float(probs @ (r - phi @ w) ** 2)
    apc = apc_definition_objective(mdp, pi, pi, np.array([eta]), eta)
    return q_error, apc


# ---------------------------------------------------------------------------
# mirror-descent regret

class AdversaryError(ValueError):
    """An adversary produced a table that is not centered or not bounded."""


Adversary = Callable[[int, np.ndarray, np.random.Generator], np.ndarray]


def center_table(raw: np.ndarray, probs: np.ndarray) -> np.ndarray:
    return raw - np.sum(probs * raw, axis=1, keepdims=True)


def random_adversary(c_bound: float) -> Adversary:
    """Uniform raw values in [-C/2, C/2], centered under the current iterate."""
    def play(t, probs, rng):
        return center_table(rng.uniform(-c_bound / 2, c_bound / 2, probs.shape), probs)
    return play


def anti_learner_adversary(c_bound: float) -> Adversary:
    """Rewards whichever action the learner currently likes least."""
    def play(t, probs, rng):
        raw = np.full(probs.shape, -c_bound / 2)
        raw[np.arange(probs.shape[0]), np.argmin(probs, axis=1)] = c_bound / 2
        return center_table(raw, probs)
    return play


def fixed_bias_adversary(c_bound: float, noise: float = 0.25) -> Adversary:
    """A fixed favourite action per state plus bounded noise."""
    def play(t, probs, rng):
        raw = rng.uniform(-noise, noise, probs.shape) * c_bound / 2
        raw[:, 0] = c_bound / 2
        return center_table(np.clip(raw, -c_bound / 2, c_bound / 2), probs)
    return play


def switching_adversary(c_bound: float, period: int = 7) -> Adversary:
    """Rotates the favoured action every ``period`` rounds."""
    def play(t, probs, rng):
        raw = np.full(probs.shape, -c_bound / 2)
        raw[:, (t // period) % probs.shape[1]] = c_bound / 2
        return center_table(raw, probs)
    return play


ADVERSARIES: dict[str, Callable[[float], Adversary]] = {
    "random": random_adversary,
    "anti-learner": anti_learner_adversary,
    "fixed-bias": fixed_bias_adversary,
    "switching": switching_adversary,
}


@dataclass(frozen=True, eq=False)
class RegretTrace:
    comparator_sums: np.ndarray  # (T, states, Y) running sum of A_t(s, y*) per deterministic comparator
    bound_value: float
    eta_used: float

    @property
    def max_cumulative(self) -> float:
        return float(self.comparator_sums[-1].max()) if len(self.comparator_sums) else 0.0

    @property
    def passed(self) -> bool:
        return self.max_cumulative <= self.bound_value


def regret_harness(y_count: int, t_count: int, c_bound: float, adversary: Adversary,
                   rng: np.random.Generator, n_states: int = 1) -> RegretTrace:
    """Multiplicative weights from uniform with eta = sqrt(ln Y / (C^2 T))
    against an adaptive adversary that sees the current iterate."""
    if y_count < 2 or t_count < 1 or c_bound <= 0:
        raise ValueError("need Y >= 2, T >= 1, C > 0")
    eta = math.sqrt(math.log(y_count) / (c_bound**2 * t_count))
    bound = 2 * c_bound * math.sqrt(t_count * math.log(y_count))
    logits = np.zeros((n_states, y_count))
    sums = np.zeros((t_count, n_states, y_count))
    running = np.zeros((n_states, y_count))
    for t in range(t_count):
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        table = np.asarray(adversary(t, probs, rng), dtype=float)
        if table.shape != probs.shape:
            raise AdversaryError(f"round {t}: table shape {table.shape}, expected {probs.shape}")
        drift = np.abs(np.sum(probs * table, axis=1)).max()
        if drift > 1e-12 * max(1.0, c_bound):
            raise AdversaryError(f"round {t}: table not centered under the iterate (mean {drift:.3e})")
        if np.abs(table).max() > c_bound * (1 + 1e-12):
            raise AdversaryError(f"round {t}: |A| = {np.abs(table).max():.6g} exceeds C = {c_bound}")
        running += table
        sums[t] = running
        logits += eta * table
    return RegretTrace(sums, bound, eta)


# ---------------------------------------------------------------------------
# gap accounting

@dataclass(frozen=True, eq=False)
class Theorem1Report:
    gaps: np.ndarray  # J(comparator) - J(pi_t) for t = 0..T
    min_gap: float
    argmin_t: int
    eps_hat: float
    coverage: CoverageReport
    rate_term: float  # H sqrt(1/T)
    coverage_term: float  # H sqrt(C_s C_y eps_hat)

    def as_dict(self) -> dict:
        return {
            "gaps": self.gaps.tolist(),
            "min_gap": self.min_gap,
            "argmin_t": self.argmin_t,
            "eps_hat": self.eps_hat,
            "coverage": self.coverage.as_dict(),
            "rate_term": self.rate_term,
            "coverage_term": self.coverage_term if math.isfinite(self.coverage_term) else "unbounded",
        }


def theorem1_gap(mdp: TurnMDP, run: RunResult, comparator: Policy) -> Theorem1Report:
    """Per-iterate gaps to ``comparator`` with the two bound components; no
    inequality is asserted (the constants are unspecified)."""
    j_star = compute_values(mdp, comparator).j
    gaps = np.array([j_star - compute_values(mdp, p).j for p in run.policies])
    k = int(np.argmin(gaps))
    res = run.residuals
    eps = float(np.mean(res)) if res.size else 0.0
    cov = concentrability(mdp, comparator, run.policies)
    T = max(len(run.policies) - 1, 1)
    H = mdp.horizon
    prod = cov.c_state * cov.c_action * eps if cov.bounded else math.inf
    return Theorem1Report(gaps, float(gaps[k]), k, eps, cov, H * math.sqrt(1 / T), H * math.sqrt(prod))


# ---------------------------------------------------------------------------
# paired second moment

@dataclass(frozen=True)
class VarianceIdentityReport:
    exact_paired: float  # E[(f(s,y) - f(s,y'))^2]
    exact_centered: float  # 2 E[(f(s,y) - E_pi f(s,.))^2]
    exact_deviation: float
    mc_paired: float
    mc_centered: float
    mc_standardized_deviation: float
    n: int


def check_regression_variance_identity(mdp: TurnMDP, policy: Policy, n: int = 100_000, seed: int = 0,
                                       f: np.ndarray | None = None) -> VarianceIdentityReport:
    """Paired-difference second moment vs twice the centered second moment of
    ``f`` (default Q^pi, shape (S, Y) in MDP row order), both exactly and by
    Monte Carlo with independent y, y' at on-policy states."""
    vt = compute_values(mdp, policy)
    pi = policy_table(mdp, policy)
    f = vt.q_flat if f is None else np.asarray(f, dtype=float)
    w = vt.occupancy_flat / mdp.horizon
    diff2 = (f[:, :, None] - f[:, None, :]) ** 2
    paired = float(np.einsum("s,sy,sz,syz->", w, pi, pi, diff2))
    mean_f = np.sum(pi * f, axis=1)
    centered = float(2 * np.einsum("s,sy,sy->", w, pi, (f - mean_f[:, None]) ** 2))

    data = collect_dataset(mdp, policy, n, "refuel", None, derive_seed(seed, "variance-identity"))
    rows = mdp.index.rows(data.state)
    lhs = (f[rows, data.action_a] - f[rows, data.action_b]) ** 2
    rhs = 2 * (f[rows, data.action_a] - mean_f[rows]) ** 2
    gap = lhs - rhs
    se = gap.std(ddof=1) / math.sqrt(n)
    # deviations at round-off level carry no sampling information
    if abs(gap.mean()) <= ALGEBRAIC_TOL:
        z = 0.0
    else:
        z = abs(gap.mean()) / se if se > 0 else math.inf
    return VarianceIdentityReport(paired, centered, abs(paired - centered), float(lhs.mean()), float(rhs.mean()),
                                  float(z), n)
