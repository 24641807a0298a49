"""Seeded instance generators."""

from __future__ import annotations

import numpy as np

from ..turn_mdp import TurnMDP, validate
from ..policy import TabularSoftmaxPolicy
from ..seeding import make_rng


def gen_random_mdp(
    horizon: int,
    states_per_turn: int,
    actions: int,
    branching: int,
    reward_range: tuple[float, float] = (0.0, 1.0),
    seed: int = 0,
) -> TurnMDP:
    """Random layered MDP with state ids ``0 .. H*n - 1`` (turn-major).

    Each (s, y) moves to ``branching`` distinct successors chosen uniformly,
    with Dirichlet(1) weights. A next-turn state left without any incoming
    edge is attached to one randomly chosen (s, y) so that every state is
    reachable under any fully supported policy. Terminal rewards are i.i.d.
    uniform on ``reward_range``.
    """
    if min(horizon, states_per_turn, actions, branching) < 1:
        raise ValueError("all counts must be >= 1")
    if branching > states_per_turn:
        raise ValueError("branching cannot exceed states_per_turn")
    lo, hi = map(float, reward_range)
    if not lo <= hi:
        raise ValueError("reward_range must be (low, high) with low <= high")
    rng = make_rng(seed, "gen_random_mdp", horizon, states_per_turn, actions, branching)
    n = states_per_turn
    turns = tuple(tuple(range(h * n, (h + 1) * n)) for h in range(horizon))
    rho = rng.dirichlet(np.ones(n))
    transition = []
    for _ in range(horizon - 1):
        P = np.zeros((n, actions, n))
        for s in range(n):
            for y in range(actions):
                nxt = rng.choice(n, size=branching, replace=False)
                P[s, y, nxt] = rng.dirichlet(np.ones(branching))
        for orphan in np.flatnonzero(P.sum(axis=(0, 1)) == 0):
            s, y = int(rng.integers(n)), int(rng.integers(actions))
            P[s, y] *= 1.0 - 1.0 / (branching + 1)
            P[s, y, orphan] = 1.0 / (branching + 1)
        transition.append(P)
    reward = rng.uniform(lo, hi, size=(n, actions))
    meta = {"generator": "random", "seed": int(seed), "branching": int(branching)}
    return validate(TurnMDP(horizon, turns, actions, rho, tuple(transition), reward, (lo, hi), meta))


STRESS_RECIPE = (
    "H=3, Y=3. Turn 1 has one opening state; action 0 ('engage') has reference probability 0.04 "
    "and reaches the high-value turn-2 state with probability 0.9 (otherwise a low-value state). "
    "Other openings reach one of two low-value turn-2 states. From the high-value state every action "
    "scatters the user over several turn-3 states where one hidden action pays 1.0, the reference "
    "plays it with probability 0.04, and the others pay about 0.5. From a low-value state action 0 "
    "('recover', reference probability 0.2) leads mostly to recovered states paying 0.35 whatever "
    "is said; other actions lead mostly to lost states paying 0.1. Reference continuation values "
    "make engaging look good, so on-policy rollin drifts into the high-value branch that the "
    "reference, and therefore the offline buffer, rarely visits."
)


def gen_covariate_shift_mdp(seed: int = 0, good_branch_states: int = 16) -> tuple[TurnMDP, TabularSoftmaxPolicy]:
    """Stress instance for offline-rollin training plus its reference policy.

    The construction is written out in ``mdp.metadata["recipe"]``.
    """
    rng = make_rng(seed, "gen_covariate_shift_mdp", good_branch_states)
    Y, G = 3, int(good_branch_states)
    if G < 1:
        raise ValueError("need at least one good-branch state")
    # ids: 0 opening | 1 good, 2-3 low | good branch 4..4+G-1, then 2 recovered, 2 lost
    opening = (0,)
    turn2 = (1, 2, 3)
    good3 = tuple(range(4, 4 + G))
    recovered = (4 + G, 5 + G)
    lost = (6 + G, 7 + G)
    turn3 = good3 + recovered + lost
    n3 = len(turn3)

    P1 = np.zeros((1, Y, 3))
    P1[0, 0] = [0.9, 0.05, 0.05]
    P1[0, 1] = [0.0, 0.7, 0.3]
    P1[0, 2] = [0.0, 0.3, 0.7]

    P2 = np.zeros((3, Y, n3))
    for y in range(Y):
        P2[0, y, :G] = rng.dirichlet(np.full(G, 2.0))
    rec, lst = slice(G, G + 2), slice(G + 2, G + 4)
    for s in (1, 2):
        P2[s, 0, rec] = 0.8 * rng.dirichlet(np.ones(2))
        P2[s, 0, lst] = 0.2 * rng.dirichlet(np.ones(2))
        for y in (1, 2):
            P2[s, y, rec] = 0.1 * rng.dirichlet(np.ones(2))
            P2[s, y, lst] = 0.9 * rng.dirichlet(np.ones(2))

    R = np.zeros((n3, Y))
    good_action = rng.integers(Y, size=G)
    for k in range(G):
        R[k] = rng.uniform(0.45, 0.55, size=Y)
        R[k, good_action[k]] = 1.0
    R[G:G + 2] = 0.35
    R[G + 2:] = 0.1

    meta = {
        "generator": "covariate_shift",
        "seed": int(seed),
        "recipe": STRESS_RECIPE,
        "engage_action": 0,
        "high_value_state": 1,
        "good_actions": [int(a) for a in good_action],
    }
    mdp = validate(TurnMDP(3, (opening, turn2, turn3), Y, np.array([1.0]), (P1, P2), R, (0.0, 1.0), meta))

    probs = np.full((mdp.n_states, Y), 1.0 / Y)
    probs[0] = [0.04, 0.48, 0.48]
    probs[2] = probs[3] = [0.2, 0.4, 0.4]
    for k in range(G):
        row = mdp.index.row(good3[k])
        probs[row] = 0.48
        probs[row, good_action[k]] = 0.04
    return mdp, TabularSoftmaxPolicy.from_probs(mdp.index, probs)
