"""Layered finite-horizon MDP with a terminal-only reward.

Turn ``h`` (1-based) owns a disjoint block of state ids. Taking action ``y`` at
a turn-``h`` state moves to a turn-``h+1`` state drawn from
``transition[h-1][s, y]``; after the action at turn ``H`` the episode ends and
the terminal reward ``terminal_reward[s, y]`` is paid. Arrays are indexed by
the *local* position of a state inside its turn; :attr:`TurnMDP.index` maps
ids to global rows (turn blocks concatenated in order).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from .indexing import StateIndex
from .tolerances import ALGEBRAIC_TOL, DEFAULT_ENUMERATION_CAP


class MDPValidationError(ValueError):
    """A :class:`TurnMDP` invariant does not hold."""


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != ndim:
        raise MDPValidationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TurnMDP:
    horizon: int
    states_per_turn: tuple[tuple[int, ...], ...]
    action_count: int
    initial_dist: np.ndarray
    transition: tuple[np.ndarray, ...]  # [h-1] -> (n_h, Y, n_{h+1})
    terminal_reward: np.ndarray  # (n_H, Y)
    reward_range: tuple[float, float]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "horizon", int(self.horizon))
        set_(self, "action_count", int(self.action_count))
        set_(self, "states_per_turn", tuple(tuple(int(s) for s in turn) for turn in self.states_per_turn))
        set_(self, "initial_dist", _frozen(self.initial_dist, 1))
        set_(self, "transition", tuple(_frozen(p, 3) for p in self.transition))
        set_(self, "terminal_reward", _frozen(self.terminal_reward, 2))
        lo, hi = self.reward_range
        set_(self, "reward_range", (float(lo), float(hi)))

    @cached_property
    def index(self) -> StateIndex:
        return StateIndex(s for turn in self.states_per_turn for s in turn)

    @property
    def state_ids(self) -> tuple[int, ...]:
        return self.index.ids

    @property
    def n_states(self) -> int:
        return len(self.index)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Row offsets of each turn block; turn ``h`` is ``offsets[h-1]:offsets[h]``."""
        return np.concatenate([[0], np.cumsum([len(t) for t in self.states_per_turn])]).astype(np.intp)

    @cached_property
    def turn_of_row(self) -> np.ndarray:
        return np.repeat(np.arange(1, self.horizon + 1), np.diff(self.offsets))

    def turn_rows(self, h: int) -> slice:
        return slice(int(self.offsets[h - 1]), int(self.offsets[h]))

    def turn_of(self, s: int) -> int:
        return int(self.turn_of_row[self.index.row(s)])

    @property
    def reward_span(self) -> float:
        lo, hi = self.reward_range
        return hi - lo

    @cached_property
    def global_transition(self) -> np.ndarray:
        """(S, Y, S) next-state probabilities over global rows; turn-H rows are zero."""
        S, Y = self.n_states, self.action_count
        P = np.zeros((S, Y, S))
        for h, p in enumerate(self.transition, start=1):
            P[self.turn_rows(h), :, self.turn_rows(h + 1)] = p
        P.setflags(write=False)
        return P

    @cached_property
    def global_initial(self) -> np.ndarray:
        rho = np.zeros(self.n_states)
        rho[self.turn_rows(1)] = self.initial_dist
        rho.setflags(write=False)
        return rho

    @cached_property
    def global_terminal_reward(self) -> np.ndarray:
        """(S, Y) terminal rewards over global rows; zero outside turn H."""
        R = np.zeros((self.n_states, self.action_count))
        R[self.turn_rows(self.horizon)] = self.terminal_reward
        R.setflags(write=False)
        return R

    @cached_property
    def sampling_tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
        """Cumulative tables for inverse-CDF sampling over global rows:
        (transition cdf (S, Y, S), last positive successor (S, Y),
        initial cdf (S,), last positive initial row)."""
        P = self.global_transition
        S = self.n_states
        cdf = np.cumsum(P, axis=2)
        last = (S - 1) - np.argmax(P[..., ::-1] > 0, axis=2)
        rho = self.global_initial
        rho_last = (S - 1) - int(np.argmax(rho[::-1] > 0))
        return cdf, last, np.cumsum(rho), rho_last


def _check_dist(p: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise MDPValidationError(f"{what}: negative or non-finite probability")
    total = float(p.sum())
    if abs(total - 1.0) > ALGEBRAIC_TOL:
        raise MDPValidationError(f"{what}: probabilities sum to {total!r}, not 1")


def validate(mdp: TurnMDP) -> TurnMDP:
    """Return ``mdp`` unchanged if every invariant holds, else raise
    :class:`MDPValidationError` naming the first offending index."""
    H, Y = mdp.horizon, mdp.action_count
    if H < 1:
        raise MDPValidationError(f"horizon must be >= 1, got {H}")
    if Y < 1:
        raise MDPValidationError(f"action_count must be >= 1, got {Y}")
    if len(mdp.states_per_turn) != H:
        raise MDPValidationError(f"states_per_turn has {len(mdp.states_per_turn)} turns, horizon is {H}")
    seen: dict[int, int] = {}
    for h, turn in enumerate(mdp.states_per_turn, start=1):
        if not turn:
            raise MDPValidationError(f"turn {h} has no states")
        for s in turn:
            if s in seen:
                raise MDPValidationError(f"turns overlap: state {s} appears in turn {seen[s]} and turn {h}")
            seen[s] = h
    sizes = [len(t) for t in mdp.states_per_turn]
    if mdp.initial_dist.shape != (sizes[0],):
        raise MDPValidationError(f"initial_dist shape {mdp.initial_dist.shape} != ({sizes[0]},)")
    _check_dist(mdp.initial_dist, "initial_dist")
    if len(mdp.transition) != H - 1:
        raise MDPValidationError(f"expected {H - 1} transition blocks, got {len(mdp.transition)}")
    for h, p in enumerate(mdp.transition, start=1):
        if p.shape != (sizes[h - 1], Y, sizes[h]):
            raise MDPValidationError(f"transition[{h}] shape {p.shape} != {(sizes[h - 1], Y, sizes[h])}")
        for i, s in enumerate(mdp.states_per_turn[h - 1]):
            for y in range(Y):
                _check_dist(p[i, y], f"transition (h={h}, s={s}, y={y})")
    R = mdp.terminal_reward
    if R.shape != (sizes[-1], Y):
        raise MDPValidationError(f"terminal_reward shape {R.shape} != {(sizes[-1], Y)}")
    lo, hi = mdp.reward_range
    if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
        raise MDPValidationError(f"bad reward_range {mdp.reward_range}")
    for i, s in enumerate(mdp.states_per_turn[-1]):
        for y in range(Y):
            r = R[i, y]
            if not (lo <= r <= hi):
                raise MDPValidationError(f"terminal reward (s={s}, y={y}) = {r!r} outside [{lo}, {hi}]")
    return mdp


# ---------------------------------------------------------------------------
# exact evaluation

@dataclass(frozen=True, eq=False)
class ValueTables:
    """Exact Q, V, A and occupancies of one policy, one array per turn."""

    q: tuple[np.ndarray, ...]
    v: tuple[np.ndarray, ...]
    adv: tuple[np.ndarray, ...]
    occupancy: tuple[np.ndarray, ...]
    j: float

    @property
    def q_flat(self) -> np.ndarray:
        return np.concatenate(self.q)

    @property
    def v_flat(self) -> np.ndarray:
        return np.concatenate(self.v)

    @property
    def adv_flat(self) -> np.ndarray:
        return np.concatenate(self.adv)

    @property
    def occupancy_flat(self) -> np.ndarray:
        return np.concatenate(self.occupancy)


def policy_table(mdp: TurnMDP, policy) -> np.ndarray:
    """(S, Y) action probabilities in ``mdp`` row order.

    ``policy`` is either a policy object or an already-aligned probability table.
    """
    if isinstance(policy, np.ndarray):
        table = policy
    else:
        table = policy.probs_table()
        if policy.index != mdp.index:
            table = table[policy.index.rows(mdp.state_ids)]
    if table.shape != (mdp.n_states, mdp.action_count):
        raise ValueError(f"policy table shape {table.shape} does not match the MDP")
    return table


def occupancy(mdp: TurnMDP, policy) -> tuple[np.ndarray, ...]:
    """Per-turn state distributions d_h under ``policy`` (forward recursion)."""
    pi = policy_table(mdp, policy)
    d = [mdp.initial_dist.copy()]
    for h, p in enumerate(mdp.transition, start=1):
        pi_h = pi[mdp.turn_rows(h)]
        d.append(np.einsum("s,sy,syt->t", d[-1], pi_h, p))
    return tuple(d)


def compute_values(mdp: TurnMDP, policy) -> ValueTables:
    pi = policy_table(mdp, policy)
    H = mdp.horizon
    q: list[np.ndarray] = [None] * H  # type: ignore[list-item]
    v: list[np.ndarray] = [None] * H  # type: ignore[list-item]
    q[H - 1] = np.array(mdp.terminal_reward)
    v[H - 1] = np.einsum("sy,sy->s", pi[mdp.turn_rows(H)], q[H - 1])
    for h in range(H - 1, 0, -1):
        q[h - 1] = np.einsum("syt,t->sy", mdp.transition[h - 1], v[h])
        v[h - 1] = np.einsum("sy,sy->s", pi[mdp.turn_rows(h)], q[h - 1])
    adv = tuple(qh - vh[:, None] for qh, vh in zip(q, v))
    d = occupancy(mdp, pi)
    j = float(mdp.initial_dist @ v[0])
    return ValueTables(q=tuple(q), v=tuple(v), adv=adv, occupancy=d, j=j)


def expected_return(mdp: TurnMDP, policy) -> float:
    return compute_values(mdp, policy).j


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[tuple[int, int], ...]  # (state id, action) per turn
    probability: float
    reward: float


class EnumerationCapExceeded(RuntimeError):
    pass


def enumerate_trajectories(mdp: TurnMDP, policy, cap: int = DEFAULT_ENUMERATION_CAP) -> list[Trajectory]:
    """Every positive-probability trajectory with its probability and reward.

    Independent of :func:`compute_values`: probabilities are multiplied along
    explicit paths, nothing is aggregated by state.
    """
    pi = policy_table(mdp, policy)
    H, Y = mdp.horizon, mdp.action_count
    ids = mdp.state_ids
    out: list[Trajectory] = []
    # stack entries: (turn, local state index, steps so far, probability so far)
    stack = [(1, i, (), float(p)) for i, p in reversed(list(enumerate(mdp.initial_dist))) if p > 0]
    while stack:
        h, i, steps, prob = stack.pop()
        row = int(mdp.offsets[h - 1]) + i
        children = []
        for y in range(Y):
            py = float(pi[row, y])
            if py <= 0:
                continue
            path = steps + ((ids[row], y),)
            if h == H:
                out.append(Trajectory(path, prob * py, float(mdp.terminal_reward[i, y])))
                if len(out) > cap:
                    raise EnumerationCapExceeded(f"more than {cap} trajectories")
                continue
            for k, pt in enumerate(mdp.transition[h - 1][i, y]):
                if pt > 0:
                    children.append((h + 1, k, path, prob * py * float(pt)))
        stack.extend(reversed(children))
    return out


# ---------------------------------------------------------------------------
# coverage

@dataclass(frozen=True)
class CoverageReport:
    """Concentrability of a comparator against training iterates.

    ``math.inf`` plays the role of "unbounded". Witnesses are
    ``(h, state, action, t)`` with ``action`` None for the state coefficient.
    """

    c_state: float
    c_action: float
    state_witness: tuple | None
    action_witness: tuple | None

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.c_state) and math.isfinite(self.c_action)

    def as_dict(self) -> dict:
        def enc(x: float):
            return x if math.isfinite(x) else "unbounded"

        return {
            "c_state": enc(self.c_state),
            "c_action": enc(self.c_action),
            "state_witness": self.state_witness,
            "action_witness": self.action_witness,
        }


def _max_ratio(num: np.ndarray, den: np.ndarray) -> tuple[float, tuple | None]:
    """Max of num/den over realized entries; x/0 with x > 0 is inf, 0/0 skipped."""
    live = (num > 0) | (den > 0)
    if not np.any(live):
        return 1.0, None
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(live, np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf), -np.inf)
    k = int(np.argmax(ratio))
    return float(ratio.flat[k]), np.unravel_index(k, ratio.shape)


def concentrability(mdp: TurnMDP, comparator, iterates: Sequence) -> CoverageReport:
    """Worst-case occupancy and action-probability ratios of ``comparator``
    against every policy in ``iterates``."""
    if len(iterates) == 0:
        raise ValueError("need at least one iterate")
    ids = mdp.state_ids
    d_star = np.concatenate(occupancy(mdp, comparator))
    pi_star = policy_table(mdp, comparator)
    d_t = np.stack([np.concatenate(occupancy(mdp, p)) for p in iterates])  # (T, S)
    pi_t = np.stack([policy_table(mdp, p) for p in iterates])  # (T, S, Y)

    c_s, ws = _max_ratio(np.broadcast_to(d_star, d_t.shape), d_t)
    c_y, wy = _max_ratio(np.broadcast_to(pi_star, pi_t.shape), pi_t)
    state_witness = None if ws is None else (int(mdp.turn_of_row[ws[1]]), ids[ws[1]], None, int(ws[0]))
    action_witness = None if wy is None else (int(mdp.turn_of_row[wy[1]]), ids[wy[1]], int(wy[2]), int(wy[0]))
    return CoverageReport(c_s, c_y, state_witness, action_witness)


# ---------------------------------------------------------------------------
# JSON

def mdp_to_dict(mdp: TurnMDP) -> dict:
    transition = []
    for h, p in enumerate(mdp.transition, start=1):
        nxt = mdp.states_per_turn[h]
        transition.append(
            [
                [[[nxt[k], float(p[i, y, k])] for k in np.flatnonzero(p[i, y])] for y in range(mdp.action_count)]
                for i in range(p.shape[0])
            ]
        )
    out = {
        "horizon": mdp.horizon,
        "states_per_turn": [list(t) for t in mdp.states_per_turn],
        "action_count": mdp.action_count,
        "initial_dist": [float(x) for x in mdp.initial_dist],
        "transition": transition,
        "terminal_reward": mdp.terminal_reward.tolist(),
        "reward_range": list(mdp.reward_range),
    }
    if mdp.metadata:
        out["metadata"] = mdp.metadata
    return out


def mdp_from_dict(doc: dict) -> TurnMDP:
    try:
        states = [list(map(int, t)) for t in doc["states_per_turn"]]
        H, Y = int(doc["horizon"]), int(doc["action_count"])
        blocks = []
        for h, rows in enumerate(doc["transition"], start=1):
            if h >= len(states):
                raise MDPValidationError(f"transition block {h} has no next turn")
            local = {s: k for k, s in enumerate(states[h])}
            p = np.zeros((len(states[h - 1]), Y, len(states[h])))
            if len(rows) != len(states[h - 1]):
                raise MDPValidationError(f"transition[{h}] lists {len(rows)} states, expected {len(states[h - 1])}")
            for i, per_action in enumerate(rows):
                if len(per_action) != Y:
                    raise MDPValidationError(f"transition (h={h}, s={states[h - 1][i]}) lists {len(per_action)} actions")
                for y, pairs in enumerate(per_action):
                    for s_next, prob in pairs:
                        if int(s_next) not in local:
                            raise MDPValidationError(
                                f"transition (h={h}, s={states[h - 1][i]}, y={y}) targets state {s_next} not in turn {h + 1}"
                            )
                        p[i, y, local[int(s_next)]] += float(prob)
            blocks.append(p)
        mdp = TurnMDP(
            horizon=H,
            states_per_turn=tuple(tuple(t) for t in states),
            action_count=Y,
            initial_dist=np.asarray(doc["initial_dist"], dtype=float),
            transition=tuple(blocks),
            terminal_reward=np.asarray(doc["terminal_reward"], dtype=float),
            reward_range=tuple(doc["reward_range"]),
            metadata=dict(doc.get("metadata", {})),
        )
    except (KeyError, TypeError) as exc:
        raise MDPValidationError(f"malformed MDP document: {exc!r}") from exc
    return validate(mdp)


def save_mdp(mdp: TurnMDP, path: str | Path) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(mdp), indent=1) + "\n")


def load_mdp(path: str | Path) -> TurnMDP:
    return mdp_from_dict(json.loads(Path(path).read_text()))
