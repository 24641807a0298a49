"""Rollins, shared-prefix resets, paired rollouts and dataset collection.

Sampling is vectorized over records. Each record consumes one row of a
uniform matrix drawn from a Philox stream keyed by the collector seed, so
record ``i`` depends only on ``(collector_seed, i)`` and not on how many
records are collected alongside it. Column layout of a row (H = horizon):

    0                 turn draw
    1                 initial-state / buffer-record draw
    2 + 2(t-1)        rollin action at turn t        (t = 1..H-1)
    3 + 2(t-1)        rollin transition out of turn t
    2H, 2H+1          the two paired actions
    2H+2 + 2(t-1)     rollout a: transition out of turn t, then
    2H+3 + 2(t-1)       the action at turn t+1
    2H+2 + 2(H-1) ... rollout b, same layout
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .turn_mdp import TurnMDP
from .policy import Policy
from .seeding import inverse_cdf, make_rng

SCHEMES = ("refuel", "lt-online", "lt-mixed", "lt-offline", "mt-mixed")
BUFFER_SCHEMES = ("lt-mixed", "lt-offline", "mt-mixed")


def uniform_width(horizon: int) -> int:
    return 2 * horizon + 2 + 4 * (horizon - 1)


@dataclass(frozen=True)
class PairSample:
    turn: int
    state: int
    action_a: int
    action_b: int
    reward_a: float
    reward_b: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column store of :class:`PairSample` records."""

    turn: np.ndarray
    state: np.ndarray
    action_a: np.ndarray
    action_b: np.ndarray
    reward_a: np.ndarray
    reward_b: np.ndarray
    scheme: str
    collector_seed: int

    def __post_init__(self):
        cols = {}
        for name, dtype in (("turn", np.int64), ("state", np.int64), ("action_a", np.intp), ("action_b", np.intp),
                            ("reward_a", np.float64), ("reward_b", np.float64)):
            arr = np.array(getattr(self, name), dtype=dtype).reshape(-1)
            arr.setflags(write=False)
            cols[name] = arr
        if len({a.size for a in cols.values()}) != 1:
            raise ValueError("dataset columns have different lengths")
        for name, arr in cols.items():
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.turn.size

    def __iter__(self) -> Iterator[PairSample]:
        for k in range(len(self)):
            yield self[k]

    def __getitem__(self, k: int) -> PairSample:
        return PairSample(int(self.turn[k]), int(self.state[k]), int(self.action_a[k]), int(self.action_b[k]),
                          float(self.reward_a[k]), float(self.reward_b[k]))

    @property
    def reward_diff(self) -> np.ndarray:
        return self.reward_a - self.reward_b

    @classmethod
    def from_samples(cls, samples: Sequence[PairSample], scheme: str = "manual", collector_seed: int = 0) -> "Dataset":
        cols = list(zip(*[(p.turn, p.state, p.action_a, p.action_b, p.reward_a, p.reward_b) for p in samples])) or [()] * 6
        return cls(*cols, scheme=scheme, collector_seed=collector_seed)

    def swapped(self) -> "Dataset":
        """Every record with its two branches exchanged."""
        return Dataset(self.turn, self.state, self.action_b, self.action_a, self.reward_b, self.reward_a,
                       self.scheme, self.collector_seed)

    def with_rewards(self, reward_a: np.ndarray, reward_b: np.ndarray) -> "Dataset":
        return Dataset(self.turn, self.state, self.action_a, self.action_b, reward_a, reward_b,
                       self.scheme, self.collector_seed)

    def check_against(self, mdp: TurnMDP) -> None:
        """Raise ``ValueError`` unless every record is consistent with ``mdp``."""
        H, Y = mdp.horizon, mdp.action_count
        lo, hi = mdp.reward_range
        if np.any((self.turn < 1) | (self.turn > H)):
            raise ValueError("turn outside 1..H")
        if np.any((self.action_a < 0) | (self.action_a >= Y) | (self.action_b < 0) | (self.action_b >= Y)):
            raise ValueError("action outside 0..Y-1")
        if np.any(mdp.turn_of_row[mdp.index.rows(self.state)] != self.turn):
            raise ValueError("state does not belong to the recorded turn")
        r = np.concatenate([self.reward_a, self.reward_b])
        if np.any((r < lo) | (r > hi)):
            raise ValueError("reward outside the MDP reward range")


@dataclass(frozen=True, eq=False)
class OfflineBuffer:
    """Frozen prefixes generated once by ``generator_policy``.

    ``prefixes[h-1]`` holds the turn-h state of every stored trajectory, so
    each stratum has the same size and state frequencies follow the
    generator's occupancy. The last-turn pair columns are aligned with
    ``prefixes[H-1]``.
    """

    prefixes: tuple[np.ndarray, ...]
    last_action_a: np.ndarray
    last_action_b: np.ndarray
    last_reward_a: np.ndarray
    last_reward_b: np.ndarray
    generator_policy: Policy
    seed: int

    def __len__(self) -> int:
        return self.last_action_a.size


# ---------------------------------------------------------------------------
# vectorized core

class _Engine:
    def __init__(self, mdp: TurnMDP, policy: Policy):
        self.mdp = mdp
        self.policy = policy
        self.prow = np.arange(mdp.n_states) if policy.index == mdp.index else policy.index.rows(mdp.state_ids)
        self.t_cdf, self.t_last, self.rho_cdf, self.rho_last = mdp.sampling_tables
        self.R = mdp.global_terminal_reward

    def act(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.policy.sample_rows(self.prow[rows], u)

    def step(self, rows: np.ndarray, acts: np.ndarray, u: np.ndarray) -> np.ndarray:
        return inverse_cdf(self.t_cdf[rows, acts], self.t_last[rows, acts], u)

    def initial(self, u: np.ndarray) -> np.ndarray:
        cdf = np.broadcast_to(self.rho_cdf, (u.size, self.rho_cdf.size))
        return inverse_cdf(cdf, np.full(u.size, self.rho_last), u)

    def rollin(self, h: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Rows of the turn-``h`` states reached by running the policy from rho."""
        rows = self.initial(u[:, 1])
        for t in range(1, self.mdp.horizon):
            live = h > t
            if not live.any():
                break
            r = rows[live]
            y = self.act(r, u[live, 2 + 2 * (t - 1)])
            rows[live] = self.step(r, y, u[live, 3 + 2 * (t - 1)])
        return rows

    def rollout(self, h: np.ndarray, rows: np.ndarray, acts: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Terminal reward after taking ``acts`` at ``rows`` (turn ``h``) then following the policy."""
        rows, acts = rows.copy(), acts.copy()
        for t in range(1, self.mdp.horizon):
            live = h <= t
            if not live.any():
                continue
            nxt = self.step(rows[live], acts[live], u[live, 2 * (t - 1)])
            rows[live] = nxt
            acts[live] = self.act(nxt, u[live, 2 * (t - 1) + 1])
        return self.R[rows, acts]

    def pairs(self, h: np.ndarray, rows: np.ndarray, u: np.ndarray):
        H = self.mdp.horizon
        ya = self.act(rows, u[:, 2 * H])
        yb = self.act(rows, u[:, 2 * H + 1])
        base = 2 * H + 2
        ra = self.rollout(h, rows, ya, u[:, base:base + 2 * (H - 1)])
        rb = self.rollout(h, rows, yb, u[:, base + 2 * (H - 1):])
        return ya, yb, ra, rb


def _check_turn(mdp: TurnMDP, h: int) -> int:
    h = int(h)
    if not 1 <= h <= mdp.horizon:
        raise ValueError(f"turn {h} outside 1..{mdp.horizon}")
    return h


def _uniform_row(mdp: TurnMDP, rng: np.random.Generator) -> np.ndarray:
    return rng.random((1, uniform_width(mdp.horizon)))


def _state_row(mdp: TurnMDP, h: int, s: int) -> int:
    row = mdp.index.row(s)
    if mdp.turn_of_row[row] != h:
        raise ValueError(f"state {s} is not a turn-{h} state")
    return row


# ---------------------------------------------------------------------------
# single-draw API

def rollin(mdp: TurnMDP, policy: Policy, h: int, rng: np.random.Generator) -> int:
    """Sample a turn-``h`` state from d_h of ``policy``."""
    h = _check_turn(mdp, h)
    rows = _Engine(mdp, policy).rollin(np.array([h]), _uniform_row(mdp, rng))
    return mdp.state_ids[int(rows[0])]


def rollout_from(mdp: TurnMDP, policy: Policy, h: int, s: int, y: int, rng: np.random.Generator) -> float:
    """Reset to ``s`` at turn ``h``, play ``y``, follow ``policy`` to the end; return the terminal reward."""
    h = _check_turn(mdp, h)
    row = _state_row(mdp, h, s)
    y = policy._action(y)
    u = _uniform_row(mdp, rng)[:, : 2 * (mdp.horizon - 1)]
    return float(_Engine(mdp, policy).rollout(np.array([h]), np.array([row]), np.array([y]), u)[0])


def rollin_many(mdp: TurnMDP, policy: Policy, h: int, n: int, seed: int = 0) -> np.ndarray:
    """``n`` independent :func:`rollin` draws (state ids), vectorized."""
    h = _check_turn(mdp, h)
    u = make_rng(seed, "rollin_many").random((n, uniform_width(mdp.horizon)))
    rows = _Engine(mdp, policy).rollin(np.full(n, h), u)
    return np.asarray(mdp.state_ids, dtype=np.int64)[rows]


def rollout_many(mdp: TurnMDP, policy: Policy, h: int, s: int, y: int, n: int, seed: int = 0) -> np.ndarray:
    """``n`` independent :func:`rollout_from` draws, vectorized."""
    h = _check_turn(mdp, h)
    row = _state_row(mdp, h, s)
    y = policy._action(y)
    u = make_rng(seed, "rollout_many").random((n, 2 * (mdp.horizon - 1)))
    return _Engine(mdp, policy).rollout(np.full(n, h), np.full(n, row), np.full(n, y), u)


def collect_pair(mdp: TurnMDP, policy: Policy, h: int, s: int, rng: np.random.Generator) -> PairSample:
    """Two independent actions at ``s`` and two independent rollouts sharing only the prefix."""
    h = _check_turn(mdp, h)
    row = _state_row(mdp, h, s)
    ya, yb, ra, rb = _Engine(mdp, policy).pairs(np.array([h]), np.array([row]), _uniform_row(mdp, rng))
    return PairSample(h, int(s), int(ya[0]), int(yb[0]), float(ra[0]), float(rb[0]))


# ---------------------------------------------------------------------------
# datasets

def _seed_from(rng: np.random.Generator | int) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(0, 2**63 - 1))


def collect_dataset(
    mdp: TurnMDP,
    policy: Policy,
    n: int,
    scheme: str = "refuel",
    offline: OfflineBuffer | None = None,
    rng: np.random.Generator | int = 0,
) -> Dataset:
    """Collect ``n`` paired records under one of :data:`SCHEMES`.

    ``rng`` may be a generator (a collector seed is drawn from it) or the
    collector seed itself.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if n < 1:
        raise ValueError("a dataset needs at least one record")
    needs_buffer = scheme in BUFFER_SCHEMES
    if needs_buffer and offline is None:
        raise ValueError(f"scheme {scheme!r} needs an offline buffer")
    if not needs_buffer and offline is not None:
        raise ValueError(f"scheme {scheme!r} does not use an offline buffer")

    seed = _seed_from(rng)
    H = mdp.horizon
    u = make_rng(seed, "collect").random((n, uniform_width(H)))
    eng = _Engine(mdp, policy)

    if scheme in ("refuel", "mt-mixed"):
        h = np.minimum((u[:, 0] * H).astype(np.int64) + 1, H)
    else:
        h = np.full(n, H, dtype=np.int64)

    if scheme == "lt-offline":
        M = len(offline)
        if M == 0:
            raise ValueError("offline buffer has no last-turn records")
        j = np.minimum((u[:, 1] * M).astype(np.intp), M - 1)
        return Dataset(h, offline.prefixes[H - 1][j], offline.last_action_a[j], offline.last_action_b[j],
                       offline.last_reward_a[j], offline.last_reward_b[j], scheme, seed)

    if scheme in ("refuel", "lt-online"):
        rows = eng.rollin(h, u)
    else:
        rows = np.empty(n, dtype=np.intp)
        for t in np.unique(h):
            stratum = offline.prefixes[t - 1]
            if stratum.size == 0:
                raise ValueError(f"offline buffer has no turn-{t} prefixes")
            pick = h == t
            j = np.minimum((u[pick, 1] * stratum.size).astype(np.intp), stratum.size - 1)
            rows[pick] = mdp.index.rows(stratum[j])
    ya, yb, ra, rb = eng.pairs(h, rows, u)
    ids = np.asarray(mdp.state_ids, dtype=np.int64)
    return Dataset(h, ids[rows], ya, yb, ra, rb, scheme, seed)


def build_offline_buffer(mdp: TurnMDP, reference: Policy, size: int, rng: np.random.Generator | int = 0) -> OfflineBuffer:
    """Roll ``size`` full trajectories of ``reference`` and freeze their prefixes,
    plus one extra pair of last-turn actions per trajectory for lt-offline."""
    if size < 1:
        raise ValueError("buffer size must be positive")
    seed = _seed_from(rng)
    H = mdp.horizon
    u = make_rng(seed, "buffer").random((size, uniform_width(H)))
    eng = _Engine(mdp, reference)
    ids = np.asarray(mdp.state_ids, dtype=np.int64)
    rows = eng.initial(u[:, 1])
    prefixes = [ids[rows]]
    for t in range(1, H):
        y = eng.act(rows, u[:, 2 + 2 * (t - 1)])
        rows = eng.step(rows, y, u[:, 3 + 2 * (t - 1)])
        prefixes.append(ids[rows])
    ya = eng.act(rows, u[:, 2 * H])
    yb = eng.act(rows, u[:, 2 * H + 1])
    R = mdp.global_terminal_reward
    frozen = [np.array(a) for a in (*prefixes, ya, yb, R[rows, ya], R[rows, yb])]
    for a in frozen:
        a.setflags(write=False)
    return OfflineBuffer(tuple(frozen[:H]), *frozen[H:], generator_policy=reference, seed=seed)


def shape_reward_kl(raw: float, current: Policy, base: Policy, s: int, y: int, gamma: float) -> float:
    """Reward minus ``gamma`` times the log-ratio of ``current`` to ``base`` at (s, y)."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if gamma == 0:
        return float(raw)
    return float(raw - gamma * (current.log_prob(s, y) - base.log_prob(s, y)))


def shape_dataset_kl(dataset: Dataset, current: Policy, base: Policy, gamma: float) -> Dataset:
    """Apply :func:`shape_reward_kl` to both branches of every record."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if gamma == 0:
        return dataset
    rows = current.index.rows(dataset.state)
    ratio = current.log_probs_table - base.log_probs_table[base.index.rows(np.asarray(current.index.ids))]
    ra = dataset.reward_a - gamma * ratio[rows, dataset.action_a]
    rb = dataset.reward_b - gamma * ratio[rows, dataset.action_b]
    return dataset.with_rewards(ra, rb)


# ---------------------------------------------------------------------------
# JSON lines

def save_dataset(dataset: Dataset, path: str | Path) -> None:
    lines = [json.dumps({"scheme": dataset.scheme, "seed": dataset.collector_seed})]
    for p in dataset:
        lines.append(json.dumps({"h": p.turn, "s": p.state, "y_a": p.action_a, "y_b": p.action_b,
                                 "r_a": p.reward_a, "r_b": p.reward_b}))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> Dataset:
    header, *records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    samples = [PairSample(int(r["h"]), int(r["s"]), int(r["y_a"]), int(r["y_b"]), float(r["r_a"]), float(r["r_b"]))
               for r in records]
    return Dataset.from_samples(samples, scheme=header["scheme"], collector_seed=int(header["seed"]))
