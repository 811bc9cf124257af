from __future__ import annotations

import itertools
import math

import numpy as np
import pytest
from conftest import one_shot_game
from hypothesis import given, settings
from hypothesis import strategies as st

from pubcoord import capi
from pubcoord.capi import (
    CapiConfig,
    act,
    assess,
    assess_batch,
    greedy_joint_policy,
    greedy_prescription,
    k_most_likely,
    load_checkpoint,
    make_state,
    prescription_vectors,
    run_episode,
    sample_vectors,
    save_checkpoint,
    train_capi,
    train_step,
    unique_rows,
    vector_probability,
    write_training_log,
)
from pubcoord.exact import backward_induction, build_belief_graph, solve_pubmdp
from pubcoord.fosg import GameError, evaluate_joint_policy
from pubcoord.models import BufferEntry, ConstantValue, OracleValue, TabularValue
from pubcoord.oracle import load_golden
from pubcoord.pubmdp import (
    CapExceeded,
    belief_key,
    expected_reward,
    initial_belief,
    next_belief,
    reachable_beliefs,
)
from pubcoord.zoo import TINY_HANABI_VARIANTS, tiny_hanabi, trade_comm


def random_rows(rng, sizes, ties=False):
    rows = []
    for a in sizes:
        p = rng.integers(1, 4, size=a).astype(float) if ties else rng.dirichlet(np.ones(a))
        rows.append(p / p.sum())
    return rows, tuple(tuple(range(10, 10 + a)) for a in sizes)


def sorted_enumeration(rows, legal):
    vecs = list(itertools.product(*legal))
    probs = [vector_probability(rows, legal, v) for v in vecs]
    return vecs, np.array(probs)


class SumValue:
    trainable = False

    def __init__(self, a, b):
        self.a, self.b = a, b

    def value(self, game, belief):
        return self.a.value(game, belief) + self.b.value(game, belief)

    def values(self, game, child, bits):
        return self.a.values(game, child, bits) + self.b.values(game, child, bits)


def random_table_value(game, rng):
    v = TabularValue()
    for b in reachable_beliefs(game):
        v.table[belief_key(b)] = float(rng.normal())
    return v


# -- acquisition -------------------------------------------------------------


def test_k_most_likely_examples():
    rows = [np.array([0.9, 0.1]), np.array([0.8, 0.2])]
    legal = ((0, 1), (0, 1))
    top = k_most_likely(rows, legal, 1)
    assert top.tolist() == [[0, 0]]
    assert vector_probability(rows, legal, top[0]) == pytest.approx(0.72)
    full = k_most_likely(rows, legal, 10)
    assert full.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]  # 0.72, 0.18, 0.08, 0.02


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_k_most_likely_matches_sorted_enumeration(seed, ties):
    rng = np.random.default_rng(seed)
    sizes = rng.integers(1, 5, size=int(rng.integers(1, 7)))
    rows, legal = random_rows(rng, sizes, ties)
    vecs, probs = sorted_enumeration(rows, legal)
    k = int(rng.integers(1, len(vecs) + 3))
    got = k_most_likely(rows, legal, k)
    assert len(got) == min(k, len(vecs))
    assert len({tuple(v) for v in got.tolist()}) == len(got)
    got_p = np.array([vector_probability(rows, legal, v) for v in got])
    expect_p = np.sort(probs)[::-1][: len(got)]
    assert np.allclose(got_p, expect_p, rtol=1e-12, atol=0)


def test_sample_frequencies_match_product_probabilities():
    rng = np.random.default_rng(3)
    rows = [np.array([0.5, 0.5]), np.array([1 / 3] * 3), np.array([0.7, 0.2, 0.1])]
    legal = ((0, 1), (0, 1, 2), (0, 1, 2))
    n = 10**5
    draws = sample_vectors(rows, legal, n, rng)
    _, inv = unique_rows(draws)
    first, _ = unique_rows(draws)
    counts = np.bincount(inv)
    for g, c in zip(draws[first], counts):
        p = vector_probability(rows, legal, g)
        assert abs(c / n - p) <= 3 * math.sqrt(p * (1 - p) / n)
    assert len(first) == 18


def test_sample_mode_dedupes(rng):
    rows, legal = random_rows(rng, [2, 2])
    out = prescription_vectors(rows, legal, 500, "sample", rng)
    assert len(out) <= 4 and len({tuple(v) for v in out.tolist()}) == len(out)


def test_enumerate_all_and_cap():
    legal = ((0, 1), (0, 1, 2))
    out = prescription_vectors([None, None], legal, 1, "enumerate_all")
    assert out.tolist() == [list(v) for v in itertools.product(*legal)]
    with pytest.raises(CapExceeded):
        prescription_vectors([None, None], legal, 1, "enumerate_all", cap=5)
    with pytest.raises(GameError):
        prescription_vectors([None], ((0,),), 0, "sample")


def test_unique_rows_matches_numpy(rng, monkeypatch):
    mat = rng.integers(0, 3, size=(500, 4))
    first, inv = unique_rows(mat)
    assert np.array_equal(mat[first][inv], mat)
    assert list(first) == sorted(first)
    assert len(first) == len(np.unique(mat, axis=0))
    # every row hashing to the same value must still come out right
    monkeypatch.setattr(capi, "_HASH_MULT", np.zeros(4096, dtype=np.int64))
    first2, inv2 = unique_rows(mat)
    assert np.array_equal(first, first2) and np.array_equal(inv, inv2)


def test_vector_probability_is_product(rng):
    rows, legal = random_rows(rng, [3, 2, 4])
    for v in itertools.product(*legal):
        direct = np.prod([r[la.index(a)] for r, la, a in zip(rows, legal, v)])
        assert vector_probability(rows, legal, v) == pytest.approx(direct, abs=1e-12)


# -- assessment --------------------------------------------------------------


def test_assess_terminal_step_is_expected_reward():
    g = tiny_hanabi("A")
    b = next_belief(g, initial_belief(g), (0, 1, 0, 0), 2)
    for gamma in itertools.product(*b.public_set(g).row_legal):
        q, _ = assess(g, b, gamma, ConstantValue(7.0))
        assert q == pytest.approx(expected_reward(g, b, gamma))


def test_assess_constant_value_adds_constant():
    g = trade_comm(2, 2)
    b = initial_belief(g)
    for gamma in itertools.product(*b.public_set(g).row_legal):
        q, res = assess(g, b, gamma, ConstantValue(0.3))
        assert q == pytest.approx(res.reward + 0.3, abs=1e-12)


def test_assess_is_linear_in_value(rng):
    g = tiny_hanabi("F")
    v1, v2 = random_table_value(g, rng), random_table_value(g, rng)
    for b in reachable_beliefs(g):
        if b.terminal:
            continue
        vecs = prescription_vectors(None, b.public_set(g).row_legal, 1, "enumerate_all")
        a1, a2 = assess_batch(g, b, vecs, v1), assess_batch(g, b, vecs, v2)
        both = assess_batch(g, b, vecs, SumValue(v1, v2))
        assert np.allclose(both.q, a1.q + a2.q - a1.reward, atol=1e-12)
        for gamma, q in zip(vecs, a1.q):
            assert assess(g, b, tuple(gamma), v1)[0] == pytest.approx(q, abs=1e-12)


def test_oracle_value_lookahead_is_bellman_optimal():
    for v in TINY_HANABI_VARIANTS:
        g = tiny_hanabi(v)
        _, solver = solve_pubmdp(g)
        oracle = OracleValue(solver)
        for b in reachable_beliefs(g):
            if b.terminal:
                continue
            vecs = prescription_vectors(None, b.public_set(g).row_legal, 1, "enumerate_all")
            assert assess_batch(g, b, vecs, oracle).q.max() == pytest.approx(solver.value(b), abs=1e-9)


# -- acting --------------------------------------------------------------------


def oracle_state(game, **kw):
    _, solver = solve_pubmdp(game)
    cfg = CapiConfig(acquisition="enumerate_all", exploration="none", **kw)
    return make_state(game, cfg, np.random.default_rng(0), value=OracleValue(solver)), solver


def test_act_exhaustive_is_greedy():
    g = tiny_hanabi("D")
    state, solver = oracle_state(g)
    b = initial_belief(g)
    res = act(state, b, np.random.default_rng(0))
    assert res.executed == res.entry.prescription
    assert res.entry.q == pytest.approx(solver.value(b), abs=1e-12)
    assert int(np.argmax(res.assessment.q)) == [tuple(x) for x in res.vectors.tolist()].index(res.executed)


def test_act_epsilon_one_explores_uniformly():
    g = tiny_hanabi("E")
    cfg = CapiConfig(acquisition="enumerate_all", exploration="none")
    state = make_state(g, cfg, np.random.default_rng(0), value=ConstantValue(0.0))
    b = next_belief(g, initial_belief(g), (0, 1, 0, 0), 2)
    rng = np.random.default_rng(1)
    n = 6000
    results = [act(state, b, rng, explore=True) for _ in range(n)]
    targets = {r.entry.prescription for r in results}
    assert len(targets) == 1
    counts = {}
    for r in results:
        counts[r.executed] = counts.get(r.executed, 0) + 1
    m = len(results[0].vectors)
    assert len(counts) == m
    p = 1 / m
    for c in counts.values():
        assert abs(c / n - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_act_is_deterministic_given_seed():
    g = trade_comm(2, 2)
    state = make_state(g, CapiConfig(num_vectors=20), np.random.default_rng(0))
    b = initial_belief(g)
    r1 = act(state, b, np.random.default_rng(5), explore=True)
    r2 = act(state, b, np.random.default_rng(5), explore=True)
    assert r1.executed == r2.executed and r1.entry == r2.entry


def test_structured_exploration_rewrites_one_row():
    g = trade_comm(3, 3)
    cfg = CapiConfig(num_vectors=200, structured_exploration=True, exploration="none")
    state = make_state(g, cfg, np.random.default_rng(0))
    b = initial_belief(g)
    ps = b.public_set(g)
    base = tuple(la[0] for la in ps.row_legal)
    # one-hot rows: without the rewrite every draw would equal ``base``
    state.policy.train(g, [BufferEntry(b, base, 0.0)])
    rng = np.random.default_rng(2)
    for _ in range(50):
        res = act(state, b, rng)
        diff = {r for v in res.vectors.tolist() for r, (x, y) in enumerate(zip(v, base)) if x != y}
        assert len(diff) <= 1
        assert all(len(ps.row_legal[r]) > 1 for r in diff)


# -- episodes and training -------------------------------------------------------


def test_episode_buffer_sizes():
    for v in TINY_HANABI_VARIANTS:
        g = tiny_hanabi(v)
        state = make_state(g, CapiConfig(num_vectors=8), np.random.default_rng(0))
        for seed in range(5):
            buf = run_episode(state, np.random.default_rng(seed))
            assert 1 <= len(buf) <= 1 + g.spec.num_actions
    one = one_shot_game({(0, 0): 1.0, (0, 1): 0.0, (1, 0): 0.0, (1, 1): 2.0}, num_players=2)
    state = make_state(one, CapiConfig(num_vectors=4), np.random.default_rng(0))
    assert len(run_episode(state, np.random.default_rng(0))) == 1


def test_horizon_one_greedy_policy_is_root_argmax():
    one = one_shot_game({(0, 0): 1.0, (0, 1): 0.0, (1, 0): 0.0, (1, 1): 2.0}, num_players=2)
    state = make_state(one, CapiConfig(acquisition="enumerate_all"), np.random.default_rng(0))
    assert greedy_prescription(state, initial_belief(one)) == (1, 1)
    assert evaluate_joint_policy(one, greedy_joint_policy(state)) == 2.0


def test_train_step_wipes_buffer():
    g = tiny_hanabi("B")
    state = make_state(g, CapiConfig(num_vectors=4), np.random.default_rng(0))
    buf = run_episode(state, np.random.default_rng(0))
    train_step(state, buf)
    assert buf == [] and state.episodes == 1
    with pytest.raises(GameError):
        train_step(state, [])


def test_episode_node_cap():
    g = trade_comm(2, 2)
    state = make_state(g, CapiConfig(num_vectors=8, max_nodes=2, epsilon=1.0), np.random.default_rng(0))
    with pytest.raises(CapExceeded):
        for seed in range(20):
            run_episode(state, np.random.default_rng(seed))


def test_greedy_policy_matches_backed_up_value():
    for v in "BF":
        g = tiny_hanabi(v)
        state, solver = oracle_state(g)
        values, _ = backward_induction(build_belief_graph(g))
        assert evaluate_joint_policy(g, greedy_joint_policy(state)) == pytest.approx(values[0], abs=1e-9)


def test_enumerated_tabular_capi_converges():
    golden = load_golden()
    for v in TINY_HANABI_VARIANTS:
        g = tiny_hanabi(v)
        cfg = CapiConfig(acquisition="enumerate_all", epsilon=0.5)
        run = train_capi(g, cfg, np.random.default_rng(0), 300, eval_every=10, target=golden[g.name])
        assert run.best_value == pytest.approx(golden[g.name], abs=1e-9), v
        assert all(val <= golden[g.name] + 1e-9 for _, val, *_ in run.curve)


def test_once_per_episode_exploration_is_reproducible():
    g = trade_comm(2, 2)
    cfg = CapiConfig(num_vectors=16, exploration="once_per_episode")
    curves = []
    for _ in range(2):
        run = train_capi(g, cfg, np.random.default_rng(4), 20, eval_every=5, record_time=False)
        curves.append(run.curve)
    assert curves[0] == curves[1]


def test_config_validation():
    g = tiny_hanabi("E")
    for bad in [dict(num_vectors=0), dict(epsilon=1.5), dict(policy_floor=0.34), dict(acquisition="x")]:
        with pytest.raises(GameError):
            CapiConfig(**bad).validate(g)
    CapiConfig(policy_floor=0.3).validate(g)


def test_checkpoint_round_trip(tmp_path):
    g = trade_comm(2, 2)
    for cfg in [CapiConfig(num_vectors=16), CapiConfig(num_vectors=16, backend="network", hidden=(8, 8))]:
        run = train_capi(g, cfg, np.random.default_rng(0), 5, eval_every=5)
        path = tmp_path / f"{cfg.backend}.npz"
        save_checkpoint(run.state, path)
        back = load_checkpoint(g, path)
        assert back.config == cfg and back.episodes == run.state.episodes
        for b in list(reachable_beliefs(g))[:200]:
            if b.terminal:
                continue
            assert back.value.value(g, b) == run.state.value.value(g, b)
            for r1, r2 in zip(back.policy.rows(g, b), run.state.policy.rows(g, b)):
                assert np.array_equal(r1, r2)
    with pytest.raises(GameError):
        load_checkpoint(trade_comm(2, 1), tmp_path / "tabular.npz")


def test_training_log(tmp_path):
    g = tiny_hanabi("A")
    run = train_capi(g, CapiConfig(num_vectors=4), np.random.default_rng(0), 3, eval_every=1)
    write_training_log(run, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode,greedy_return,buffer_size,wall_ms"
    assert len(lines) == 1 + len(run.curve)
