from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from scipy import stats

from conftest import bandit, chain, random_instance, random_tabular, seeds
from refuel.harness.instances import gen_covariate_shift_mdp, gen_random_mdp
from refuel.turn_mdp import compute_values, occupancy
from refuel.optimizers import solve_update_minnorm
from refuel.policy import TabularSoftmaxPolicy
from refuel.rollout import (
    Dataset,
    PairSample,
    build_offline_buffer,
    collect_dataset,
    collect_pair,
    load_dataset,
    rollin,
    rollin_many,
    rollout_from,
    rollout_many,
    save_dataset,
    shape_dataset_kl,
    shape_reward_kl,
)
from refuel.seeding import make_rng


def test_rollin_turn_one_samples_rho():
    mdp = bandit([[0.0], [1.0], [0.5]], rho=(0.2, 0.0, 0.8))
    pi = TabularSoftmaxPolicy.uniform(mdp.index, 1)
    rng = make_rng(0)
    draws = [rollin(mdp, pi, 1, rng) for _ in range(500)]
    assert set(draws) <= {0, 2}


def test_deterministic_rollin_and_rollout():
    mdp = chain(3)
    pi = TabularSoftmaxPolicy.from_probs(mdp.index, np.tile([1.0, 0.0], (3, 1)))
    rng = make_rng(1)
    assert rollin(mdp, pi, 3, rng) == 2
    assert rollout_from(mdp, pi, 1, 0, 0, rng) == compute_values(mdp, pi).q[0][0, 0] == 1.0


def test_terminal_rollout_is_reward(small_mdp):
    pi = random_tabular(small_mdp, 0)
    s = small_mdp.states_per_turn[-1][1]
    r = small_mdp.terminal_reward[1, 1]
    assert rollout_from(small_mdp, pi, 2, s, 1, make_rng(5)) == r


def test_rollin_marginals_match_occupancy(mdp3):
    pi = random_tabular(mdp3, 2)
    n = 100_000
    for h in (2, 3):
        states = rollin_many(mdp3, pi, h, n, seed=17)
        d = occupancy(mdp3, pi)[h - 1]
        turn = mdp3.states_per_turn[h - 1]
        counts = np.array([(states == s).sum() for s in turn])
        assert counts.sum() == n
        assert stats.chisquare(counts, n * d).pvalue > 1e-3


def test_rollout_mean_matches_q(mdp3):
    pi = random_tabular(mdp3, 6)
    q = compute_values(mdp3, pi).q_flat
    n = 100_000
    for s, y in ((0, 0), (4, 2)):
        h = mdp3.turn_of(s)
        r = rollout_many(mdp3, pi, h, s, y, n, seed=s)
        se = r.std(ddof=1) / math.sqrt(n)
        assert abs(r.mean() - q[mdp3.index.row(s), y]) < 3 * se + 1e-12


def test_rollout_error_decays_at_root_n_rate(mdp3):
    pi = random_tabular(mdp3, 8)
    q = compute_values(mdp3, pi).q_flat[0, 1]
    ns = (100, 1000, 10_000)
    rms = [math.sqrt(np.mean([(rollout_many(mdp3, pi, 1, 0, 1, n, seed=1000 * n + k).mean() - q) ** 2
                              for k in range(60)])) for n in ns]
    slope = np.polyfit(np.log(ns), np.log(rms), 1)[0]
    assert -0.65 <= slope <= -0.35


def test_collect_pair_terminal_turn(small_mdp):
    pi = random_tabular(small_mdp, 0)
    s = small_mdp.states_per_turn[1][0]
    p = collect_pair(small_mdp, pi, 2, s, make_rng(3))
    assert p.reward_a == small_mdp.terminal_reward[0, p.action_a]
    assert p.reward_b == small_mdp.terminal_reward[0, p.action_b]


def test_collect_pair_deterministic_everything():
    mdp = chain(3)
    pi = TabularSoftmaxPolicy.from_probs(mdp.index, np.tile([0.0, 1.0], (3, 1)))
    p = collect_pair(mdp, pi, 1, 0, make_rng(0))
    assert p.action_a == p.action_b == 1 and p.reward_a == p.reward_b == 0.0


def test_pair_rewards_symmetric(mdp3):
    pi = random_tabular(mdp3, 1)
    data = collect_dataset(mdp3, pi, 100_000, "refuel", None, 4)
    d = data.reward_diff
    assert abs(d.mean()) < 3 * d.std(ddof=1) / math.sqrt(d.size)


def test_refuel_turn_histogram_uniform(mdp3):
    data = collect_dataset(mdp3, random_tabular(mdp3, 0), 30_000, "refuel", None, 2)
    counts = np.bincount(data.turn, minlength=4)[1:]
    assert stats.chisquare(counts).pvalue > 1e-3
    data.check_against(mdp3)


def test_scheme_contracts(mdp3):
    ref = random_tabular(mdp3, 0)
    cur = random_tabular(mdp3, 1)
    buf = build_offline_buffer(mdp3, ref, 500, 9)
    off = collect_dataset(mdp3, cur, 300, "lt-offline", buf, 1)
    assert np.all(off.turn == 3)
    # every record is a verbatim buffer record
    table = {(s, a, b, ra, rb) for s, a, b, ra, rb in zip(buf.prefixes[2], buf.last_action_a, buf.last_action_b,
                                                         buf.last_reward_a, buf.last_reward_b)}
    assert all((p.state, p.action_a, p.action_b, p.reward_a, p.reward_b) in table for p in off)
    mixed = collect_dataset(mdp3, cur, 300, "lt-mixed", buf, 1)
    assert np.all(mixed.turn == 3) and set(mixed.state) <= set(buf.prefixes[2])
    mt = collect_dataset(mdp3, cur, 300, "mt-mixed", buf, 1)
    for h in (1, 2, 3):
        assert set(mt.state[mt.turn == h]) <= set(buf.prefixes[h - 1])
    assert set(np.unique(mt.turn)) == {1, 2, 3}
    online = collect_dataset(mdp3, cur, 300, "lt-online", None, 1)
    assert np.all(online.turn == 3)
    for d in (off, mixed, mt, online):
        d.check_against(mdp3)


def test_buffer_states_are_reachable(mdp3):
    ref = random_tabular(mdp3, 0)
    buf = build_offline_buffer(mdp3, ref, 1000, 0)
    occ = occupancy(mdp3, ref)
    for h, stratum in enumerate(buf.prefixes, start=1):
        rows = mdp3.index.rows(stratum) - mdp3.offsets[h - 1]
        assert np.all(occ[h - 1][rows] > 0)


def test_collection_errors(mdp3):
    pi = random_tabular(mdp3, 0)
    buf = build_offline_buffer(mdp3, pi, 10, 0)
    with pytest.raises(ValueError):
        collect_dataset(mdp3, pi, 0, "refuel")
    with pytest.raises(ValueError, match="unknown scheme"):
        collect_dataset(mdp3, pi, 5, "dpo")
    with pytest.raises(ValueError, match="needs an offline buffer"):
        collect_dataset(mdp3, pi, 5, "lt-offline")
    with pytest.raises(ValueError, match="does not use"):
        collect_dataset(mdp3, pi, 5, "refuel", buf)


def test_collection_is_deterministic_and_prefix_stable(mdp3):
    pi = random_tabular(mdp3, 0)
    a = collect_dataset(mdp3, pi, 200, "refuel", None, 42)
    b = collect_dataset(mdp3, pi, 200, "refuel", None, 42)
    c = collect_dataset(mdp3, pi, 50, "refuel", None, 42)
    for name in ("turn", "state", "action_a", "action_b", "reward_a", "reward_b"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
        assert np.array_equal(getattr(a, name)[:50], getattr(c, name))


def test_swap_leaves_solution_unchanged(mdp3):
    pi = random_tabular(mdp3, 0)
    data = collect_dataset(mdp3, pi, 400, "refuel", None, 3)
    a = solve_update_minnorm(data, pi, 0.7)
    b = solve_update_minnorm(data.swapped(), pi, 0.7)
    assert np.allclose(a.delta, b.delta, atol=1e-10)
    assert a.residual == pytest.approx(b.residual, abs=1e-12)


def test_kl_shaping():
    idx = TabularSoftmaxPolicy.uniform(chain(1).index, 2).index
    base = TabularSoftmaxPolicy(idx, np.zeros((1, 2)))
    cur = TabularSoftmaxPolicy(idx, np.array([[2.0, 0.0]]))
    assert shape_reward_kl(0.8, cur, base, 0, 0, 0.0) == 0.8
    assert shape_reward_kl(0.8, base, base, 0, 0, 3.0) == 0.8
    ratio = cur.log_prob(0, 0) - base.log_prob(0, 0)
    assert shape_reward_kl(1.0, cur, base, 0, 0, 0.05) == pytest.approx(1.0 - 0.05 * ratio)
    # the arithmetic example: log-ratio 2 at gamma 0.05 costs 0.1
    assert 1.0 - 0.05 * 2.0 == pytest.approx(0.9)
    data = Dataset.from_samples([PairSample(1, 0, 0, 1, 1.0, 0.0)])
    shaped = shape_dataset_kl(data, cur, base, 0.05)
    assert shaped.reward_a[0] == pytest.approx(shape_reward_kl(1.0, cur, base, 0, 0, 0.05))
    assert shaped.reward_b[0] == pytest.approx(shape_reward_kl(0.0, cur, base, 0, 1, 0.05))


@given(seeds)
def test_dataset_jsonl_roundtrip(seed):
    mdp = random_instance(seed, max_h=3)
    data = collect_dataset(mdp, random_tabular(mdp, seed), 25, "refuel", None, seed)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.jsonl"
        save_dataset(data, path)
        back = load_dataset(path)
    assert back.scheme == "refuel" and back.collector_seed == seed
    assert list(back) == list(data)


def test_stress_buffer_rarely_sees_high_value_branch():
    mdp, ref = gen_covariate_shift_mdp(0)
    buf = build_offline_buffer(mdp, ref, 20_000, 0)
    frac = np.mean(buf.prefixes[1] == mdp.metadata["high_value_state"])
    assert frac < 0.05
