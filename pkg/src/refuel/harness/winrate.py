"""Branch winrate: does a policy's completion from a shared prefix out-score
the reference's? Judged by the exact terminal reward, ties count one half."""

from __future__ import annotations

import math

import numpy as np

from ..turn_mdp import TurnMDP, occupancy, policy_table
from ..policy import Policy
from ..rollout import _Engine, uniform_width
from ..seeding import make_rng


def _check(mdp: TurnMDP, h: int, n: int | None = None) -> None:
    if not 1 <= h <= mdp.horizon:
        raise ValueError(f"turn {h} outside 1..{mdp.horizon}")
    if n is not None and n < 1:
        raise ValueError("n must be >= 1")


def branch_winrate(mdp: TurnMDP, policy: Policy, reference: Policy, h: int, n: int,
                   rng: np.random.Generator | int = 0) -> float:
    """Monte Carlo estimate over ``n`` trials: roll in with ``reference`` to
    turn ``h``, then complete once with each policy independently."""
    _check(mdp, h, n)
    seed = int(rng) if isinstance(rng, (int, np.integer)) else int(rng.integers(0, 2**63 - 1))
    H = mdp.horizon
    u = make_rng(seed, "branch_winrate", h).random((n, uniform_width(H)))
    hh = np.full(n, h, dtype=np.int64)
    ref = _Engine(mdp, reference)
    mine = _Engine(mdp, policy)
    rows = ref.rollin(hh, u)
    base = 2 * H + 2
    ya = mine.act(rows, u[:, 2 * H])
    yb = ref.act(rows, u[:, 2 * H + 1])
    ra = mine.rollout(hh, rows, ya, u[:, base:base + 2 * (H - 1)])
    rb = ref.rollout(hh, rows, yb, u[:, base + 2 * (H - 1):base + 4 * (H - 1)])
    return float(np.mean(np.where(ra > rb, 1.0, np.where(ra == rb, 0.5, 0.0))))


def _completion(mdp: TurnMDP, pi: np.ndarray, h: int) -> np.ndarray:
    """(n_h, n_H * Y) law of the terminal (state, action) when a turn-h state
    is completed by the policy table ``pi`` (MDP row order)."""
    start = mdp.turn_rows(h)
    dist = np.eye(start.stop - start.start)
    for t in range(h, mdp.horizon):
        sa = dist[:, :, None] * pi[mdp.turn_rows(t)][None]
        dist = np.einsum("isy,syj->ij", sa, mdp.transition[t - 1])
    last = dist[:, :, None] * pi[mdp.turn_rows(mdp.horizon)][None]
    return last.reshape(last.shape[0], -1)


def branch_winrate_exact(mdp: TurnMDP, policy: Policy, reference: Policy, h: int) -> float:
    """Exact expectation of the Monte Carlo estimator by dynamic programming."""
    _check(mdp, h)
    p_pol, p_ref = policy_table(mdp, policy), policy_table(mdp, reference)
    d = occupancy(mdp, reference)[h - 1]
    a = _completion(mdp, p_pol, h)
    b = _completion(mdp, p_ref, h)
    r = mdp.terminal_reward.ravel()
    score = np.where(r[:, None] > r[None, :], 1.0, np.where(r[:, None] == r[None, :], 0.5, 0.0))
    return float(d @ np.einsum("ia,ab,ib->i", a, score, b))


def winrate_stderr(p: float, n: int) -> float:
    """Binomial-style standard error; an upper bound once ties are scored 0.5."""
    return math.sqrt(max(p * (1 - p), 0.0) / n)
