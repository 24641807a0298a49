"""Tabular-softmax and log-linear policies over a :class:`StateIndex`.

Both classes expose the same small surface: a flat parameter vector, a
``(S, Y)`` logit table, and score vectors (gradients of log-probabilities with
respect to the parameters). Everything else is shared.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import rel_entr

from .indexing import StateIndex
from .seeding import inverse_cdf


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction; ``-inf`` logits give zero mass."""
    m = np.max(z, axis=-1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


class Policy:
    """Shared behaviour; subclasses provide ``index``, ``action_count``,
    ``logits_table``, ``params``, ``with_params`` and ``score_vectors``."""

    index: StateIndex
    action_count: int

    # -- subclass hooks -------------------------------------------------
    def logits_table(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def params(self) -> np.ndarray:
        raise NotImplementedError

    def with_params(self, params: np.ndarray) -> "Policy":
        raise NotImplementedError

    def score_vectors(self, rows: np.ndarray, actions: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def score_differences(self, rows: np.ndarray, ya: np.ndarray, yb: np.ndarray) -> np.ndarray:
        return self.score_vectors(rows, ya) - self.score_vectors(rows, yb)

    # -- shared -----------------------------------------------------------
    @property
    def n_params(self) -> int:
        return self.params.size

    @cached_property
    def log_probs_table(self) -> np.ndarray:
        lp = log_softmax(self.logits_table())
        lp.setflags(write=False)
        return lp

    def probs_table(self) -> np.ndarray:
        return self._probs

    @cached_property
    def _probs(self) -> np.ndarray:
        p = np.exp(self.log_probs_table)
        p.setflags(write=False)
        return p

    @cached_property
    def _cdf(self) -> tuple[np.ndarray, np.ndarray]:
        p = self._probs
        last = (p.shape[1] - 1) - np.argmax(p[:, ::-1] > 0, axis=1)
        return np.cumsum(p, axis=1), last

    def _action(self, y: int) -> int:
        y = int(y)
        if not 0 <= y < self.action_count:
            raise IndexError(f"action {y} outside 0..{self.action_count - 1}")
        return y

    def action_probs(self, s: int) -> np.ndarray:
        return self._probs[self.index.row(s)].copy()

    def log_prob(self, s: int, y: int) -> float:
        return float(self.log_probs_table[self.index.row(s), self._action(y)])

    def grad_log_prob(self, s: int, y: int) -> np.ndarray:
        row = np.array([self.index.row(s)])
        return self.score_vectors(row, np.array([self._action(y)]))[0]

    def sample_action(self, s: int, rng: np.random.Generator) -> int:
        """Inverse-CDF draw using one uniform variate from ``rng``."""
        return int(self.sample_rows(np.array([self.index.row(s)]), np.array([rng.random()]))[0])

    def sample_rows(self, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
        cdf, last = self._cdf
        return inverse_cdf(cdf[rows], last[rows], u)


@dataclass(frozen=True, eq=False)
class TabularSoftmaxPolicy(Policy):
    """pi(y|s) proportional to exp(logits[s, y]); parameters are the raveled logits.

    ``-inf`` logits are allowed and give exactly-zero probabilities, which is
    how deterministic comparators are represented.
    """

    index: StateIndex
    logits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.logits, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != len(self.index):
            raise ValueError(f"logits shape {arr.shape} does not match {len(self.index)} states")
        if np.any(np.isnan(arr)) or np.any(arr == np.inf) or np.any(np.all(arr == -np.inf, axis=1)):
            raise ValueError("logits must be finite or -inf, with a finite entry in every row")
        arr.setflags(write=False)
        object.__setattr__(self, "logits", arr)

    @property
    def action_count(self) -> int:
        return self.logits.shape[1]

    @classmethod
    def uniform(cls, index: StateIndex, action_count: int) -> "TabularSoftmaxPolicy":
        return cls(index, np.zeros((len(index), action_count)))

    @classmethod
    def from_probs(cls, index: StateIndex, probs: np.ndarray) -> "TabularSoftmaxPolicy":
        with np.errstate(divide="ignore"):
            return cls(index, np.log(np.asarray(probs, dtype=float)))

    @classmethod
    def greedy(cls, index: StateIndex, q: np.ndarray) -> "TabularSoftmaxPolicy":
        """Deterministic argmax of ``q`` (rows in index order); ties go to the lowest action."""
        q = np.asarray(q)
        logits = np.full(q.shape, -np.inf)
        logits[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 0.0
        return cls(index, logits)

    def logits_table(self) -> np.ndarray:
        return self.logits

    @property
    def params(self) -> np.ndarray:
        return self.logits.ravel()

    def with_params(self, params: np.ndarray) -> "TabularSoftmaxPolicy":
        return TabularSoftmaxPolicy(self.index, np.asarray(params, dtype=float).reshape(self.logits.shape))

    def score_vectors(self, rows: np.ndarray, actions: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.intp)
        actions = np.asarray(actions, dtype=np.intp)
        S, Y = self.logits.shape
        out = np.zeros((rows.size, S, Y))
        n = np.arange(rows.size)
        out[n, rows, :] = -self._probs[rows]
        out[n, rows, actions] += 1.0
        return out.reshape(rows.size, S * Y)

    def score_differences(self, rows: np.ndarray, ya: np.ndarray, yb: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.intp)
        S, Y = self.logits.shape
        out = np.zeros((rows.size, S * Y))
        n = np.arange(rows.size)
        np.add.at(out, (n, rows * Y + np.asarray(ya, dtype=np.intp)), 1.0)
        np.add.at(out, (n, rows * Y + np.asarray(yb, dtype=np.intp)), -1.0)
        return out


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense feature table phi[row, y] in R^d."""

    index: StateIndex
    table: np.ndarray  # (S, Y, d)

    def __post_init__(self):
        arr = np.array(self.table, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != len(self.index):
            raise ValueError(f"feature table shape {arr.shape} does not match {len(self.index)} states")
        if not np.all(np.isfinite(arr)):
            raise ValueError("features must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "table", arr)

    @property
    def dimension(self) -> int:
        return self.table.shape[2]

    def __call__(self, s: int, y: int) -> np.ndarray:
        return self.table[self.index.row(s), y].copy()


@dataclass(frozen=True, eq=False)
class LogLinearPolicy(Policy):
    """pi(y|s) proportional to exp(w . phi(s, y))."""

    features: FeatureMap
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).reshape(-1)
        if w.size != self.features.dimension:
            raise ValueError(f"weights have dimension {w.size}, features {self.features.dimension}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def index(self) -> StateIndex:  # type: ignore[override]
        return self.features.index

    @property
    def action_count(self) -> int:
        return self.features.table.shape[1]

    def logits_table(self) -> np.ndarray:
        return self.features.table @ self.weights

    @property
    def params(self) -> np.ndarray:
        return self.weights

    def with_params(self, params: np.ndarray) -> "LogLinearPolicy":
        return LogLinearPolicy(self.features, params)

    @cached_property
    def _mean_features(self) -> np.ndarray:
        return np.einsum("sy,syd->sd", self._probs, self.features.table)

    def score_vectors(self, rows: np.ndarray, actions: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.intp)
        return self.features.table[rows, np.asarray(actions, dtype=np.intp)] - self._mean_features[rows]

    def score_differences(self, rows: np.ndarray, ya: np.ndarray, yb: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.intp)
        phi = self.features.table
        return phi[rows, np.asarray(ya, dtype=np.intp)] - phi[rows, np.asarray(yb, dtype=np.intp)]


# ---------------------------------------------------------------------------
# two-policy quantities

def pair_predictors(candidate: Policy, reference: Policy, rows: np.ndarray, ya: np.ndarray, yb: np.ndarray) -> np.ndarray:
    """Vectorized :func:`pair_predictor` over aligned row/action arrays."""
    if candidate.index != reference.index:
        raise ValueError("candidate and reference are defined on different states")
    lc, lr = candidate.log_probs_table, reference.log_probs_table
    return (lc[rows, ya] - lr[rows, ya]) - (lc[rows, yb] - lr[rows, yb])


def pair_predictor(candidate: Policy, reference: Policy, s: int, y: int, y2: int) -> float:
    """ln(candidate/reference) at ``y`` minus the same log-ratio at ``y2``.

    Log-partitions cancel, so this is linear in the parameter difference.
    """
    row = candidate.index.row(s)
    y, y2 = candidate._action(y), candidate._action(y2)
    return float(pair_predictors(candidate, reference, np.array([row]), np.array([y]), np.array([y2]))[0])


def kl_table(a: Policy | np.ndarray, b: Policy | np.ndarray) -> np.ndarray:
    """KL(a(.|s) || b(.|s)) for every row; accepts policies or aligned probability tables."""
    pa = a.probs_table() if isinstance(a, Policy) else np.asarray(a)
    pb = b.probs_table() if isinstance(b, Policy) else np.asarray(b)
    return rel_entr(pa, pb).sum(axis=1)


def kl_divergence(a: Policy, b: Policy, s: int) -> float:
    pa, pb = a.action_probs(s), b.action_probs(s)
    return float(rel_entr(pa, pb).sum())


# ---------------------------------------------------------------------------
# JSON

def policy_to_dict(policy: Policy) -> dict:
    if isinstance(policy, TabularSoftmaxPolicy):
        logits = [[x if np.isfinite(x) else "-inf" for x in row] for row in policy.logits.tolist()]
        return {"kind": "tabular", "states": list(policy.index.ids), "logits": logits}
    if isinstance(policy, LogLinearPolicy):
        return {
            "kind": "loglinear",
            "states": list(policy.index.ids),
            "weights": policy.weights.tolist(),
            "features": policy.features.table.tolist(),
        }
    raise TypeError(f"cannot serialize {type(policy).__name__}")


def policy_from_dict(doc: dict) -> Policy:
    index = StateIndex(doc["states"])
    if doc["kind"] == "tabular":
        logits = np.array([[-np.inf if x == "-inf" else float(x) for x in row] for row in doc["logits"]])
        return TabularSoftmaxPolicy(index, logits)
    if doc["kind"] == "loglinear":
        return LogLinearPolicy(FeatureMap(index, np.asarray(doc["features"], dtype=float)), np.asarray(doc["weights"]))
    raise ValueError(f"unknown policy kind {doc['kind']!r}")
