from __future__ import annotations

import numpy as np
import pytest
from gradcheck import random_problem, relative_error

from pubcoord.models import (
    BeliefEncoder,
    BufferEntry,
    NetworkModel,
    TabularPolicy,
    TabularValue,
    apply_floor,
)
from pubcoord.pubmdp import belief_key, initial_belief, reachable_beliefs, step
from pubcoord.zoo import tiny_hanabi, trade_comm


def entry_at(game, belief, rng, q=None):
    ps = belief.public_set(game)
    gamma = tuple(la[int(rng.integers(len(la)))] for la in ps.row_legal)
    return BufferEntry(belief, gamma, float(rng.random()) if q is None else q)


def random_beliefs(game, rng, n):
    """Nonterminal beliefs met along random prescription trajectories."""
    out = []
    while len(out) < n:
        b = initial_belief(game)
        while not b.terminal and len(out) < n:
            out.append(b)
            res = step(game, b, entry_at(game, b, rng).prescription)
            obs = list(res.obs_probs)
            b = res.next_beliefs[obs[int(rng.integers(len(obs)))]]
    return out


def test_tabular_value_alpha_one_copies_target(rng):
    g = tiny_hanabi("A")
    b = initial_belief(g)
    v = TabularValue(lr=1.0)
    assert v.value(g, b) == 0.0
    v.train(g, [entry_at(g, b, rng, q=2.5)])
    assert v.value(g, b) == 2.5


def test_tabular_policy_alpha_one_is_one_hot(rng):
    g = tiny_hanabi("E")
    b = initial_belief(g)
    pol = TabularPolicy(lr=1.0, floor=0.0)
    rows = pol.rows(g, b)
    assert all(np.allclose(r, 1 / len(r)) for r in rows)
    e = entry_at(g, b, rng)
    pol.train(g, [e])
    ps = b.public_set(g)
    for r, (row, la) in enumerate(zip(pol.rows(g, b), ps.row_legal)):
        expect = np.zeros(len(la))
        expect[la.index(e.prescription[r])] = 1.0
        assert np.array_equal(row, expect)


def test_tabular_policy_floor(rng):
    g = tiny_hanabi("E")
    pol = TabularPolicy(lr=1.0, floor=0.1)
    b = initial_belief(g)
    pol.train(g, [entry_at(g, b, rng)])
    for row in pol.rows(g, b):
        assert row.sum() == pytest.approx(1.0, abs=1e-9) and row.min() >= 0.1 - 1e-12


def test_apply_floor():
    p = apply_floor(np.array([1.0, 0.0, 0.0]), 0.2)
    assert p.sum() == pytest.approx(1.0) and p.min() == pytest.approx(0.2)


def test_encoder_is_binary_and_injective():
    g = trade_comm(2, 2)
    enc = BeliefEncoder(g)
    seen = {}
    for b in reachable_beliefs(g):
        if b.terminal:
            continue
        x = enc.encode(b)
        assert x.shape == (enc.dim,) and set(np.unique(x)) <= {0.0, 1.0}
        seen[x.tobytes()] = belief_key(b)
    assert len(seen) == len(set(seen.values()))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    for k in range(10):
        assert relative_error(*random_problem(rng, squash=k % 2 == 1)) < 1e-4


def test_network_overfits_small_buffer():
    g = trade_comm(2, 2)
    rng = np.random.default_rng(5)
    beliefs = [b for b in reachable_beliefs(g) if not b.terminal]
    picks = rng.choice(len(beliefs), size=10, replace=False)
    entries = [entry_at(g, beliefs[i], rng) for i in picks]
    model = NetworkModel(g, rng, hidden=(64, 64), lr=1e-3)
    for n_steps in range(1, 10_001):
        model.train(g, entries)
        err = max(abs(model.value(g, e.belief) - e.q) for e in entries)
        if err < 1e-3:
            break
    assert err < 1e-3, f"max error {err} after {n_steps} steps"


def test_network_rows_are_distributions():
    g = trade_comm(3, 2)
    model = NetworkModel(g, np.random.default_rng(0), hidden=(8,), floor=0.05)
    rng = np.random.default_rng(1)
    for b in random_beliefs(g, rng, 20):
        for row, la in zip(model.rows(g, b), b.public_set(g).row_legal):
            assert len(row) == len(la) and row.sum() == pytest.approx(1.0, abs=1e-9)
            assert row.min() >= 0.05 - 1e-12


def test_squashed_value_stays_in_range():
    g = tiny_hanabi("E")
    model = NetworkModel(g, np.random.default_rng(0), hidden=(8,), squash=(0.0, 10.0), lr=0.5)
    b = initial_belief(g)
    for _ in range(50):
        model.train(g, [BufferEntry(b, (0, 0, 0, 0), 25.0)])
    assert 0.0 <= model.value(g, b) <= 10.0


def test_terminal_beliefs_are_worth_zero():
    g = tiny_hanabi("A")
    terminal = next(b for b in reachable_beliefs(g) if b.terminal)
    assert NetworkModel(g, np.random.default_rng(0), hidden=(4,)).value(g, terminal) == 0.0
    tab = TabularValue(default=5.0)
    assert tab.value(g, terminal) == 0.0


def test_non_finite_loss_aborts():
    g = tiny_hanabi("A")
    model = NetworkModel(g, np.random.default_rng(0), hidden=(4,))
    b = initial_belief(g)
    with pytest.raises(FloatingPointError):
        model.train(g, [BufferEntry(b, (0, 0, 0, 0), float("inf"))])
