"""Brute-force posterior tracker used as an independent oracle for belief updates.

It keeps an explicit distribution over histories and applies Bayes' rule
through the game's transition function, without indicators.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from pubcoord.fosg import enumerate_histories, info_state, root_histories
from pubcoord.pubmdp import (
    belief_key,
    expected_reward,
    initial_belief,
    next_belief,
    observation_distribution,
    reconstruct_history_distribution,
)


def prescription_rows(game, pub):
    """Rows ``(player, info_state, legal)`` sorted by player then info state."""
    hs = enumerate_histories(game)[pub].histories
    rows = []
    for i in range(game.num_players):
        seen = {}
        for h in hs:
            seen.setdefault(info_state(h, i), tuple(sorted(game.legal_actions(h.world, i))))
        rows += [(i, s, seen[s]) for s in sorted(seen)]
    return rows


def initial_posterior(game):
    roots = root_histories(game)
    total = sum(h.chance for h in roots)
    return {h: h.chance / total for h in roots}


def bayes_step(game, post, rows, gamma):
    """Observation probabilities, expected reward and normalised posteriors per observation."""
    table = {(i, s): a for (i, s, _), a in zip(rows, gamma)}
    mass, reward, nxt = {}, 0.0, {}
    for h, w in post.items():
        if w == 0:
            continue
        joint = tuple(table[(i, info_state(h, i))] for i in range(game.num_players))
        for o in game.transition(h.world, joint):
            if o.prob == 0:
                continue
            p = w * o.prob
            reward += p * o.reward
            mass[o.public] = mass.get(o.public, 0.0) + p
            nxt.setdefault(o.public, {})[h.child(joint, o)] = p
    for o, d in nxt.items():
        for h in d:
            d[h] /= mass[o]
    return mass, reward, nxt


def all_prescriptions(rows, limit=None, rng=None):
    legal = [la for _, _, la in rows]
    total = int(np.prod([len(la) for la in legal]))
    if limit is None or total <= limit:
        yield from itertools.product(*legal)
        return
    for _ in range(limit):
        yield tuple(la[int(rng.integers(len(la)))] for la in legal)


def check_against_tracker(game, limit=None, seed=0):
    """Walk every reachable belief in lockstep with the tracker; returns the number of checked updates.

    ``limit`` caps the prescriptions tried per belief (sampled when the
    belief has more); all are tried otherwise.
    """
    rng = np.random.default_rng(seed)
    stack = [(initial_belief(game), initial_posterior(game))]
    seen, checked = set(), 0
    while stack:
        b, post = stack.pop()
        hs, p = reconstruct_history_distribution(game, b)
        assert dict(zip(hs, p)) == pytest.approx({h: post.get(h, 0.0) for h in hs}, abs=1e-12)
        assert set(post) <= set(hs)
        rows = prescription_rows(game, b.public_state)
        assert [s for _, s, _ in rows] == [s for ss in b.public_set(game).info_states for s in ss]
        for gamma in all_prescriptions(rows, limit, rng):
            mass, reward, nxt = bayes_step(game, post, rows, gamma)
            assert observation_distribution(game, b, gamma) == pytest.approx(mass, abs=1e-12)
            assert expected_reward(game, b, gamma) == pytest.approx(reward, abs=1e-12)
            for o, d in nxt.items():
                nb = next_belief(game, b, gamma, o)
                hs, p = reconstruct_history_distribution(game, nb)
                # compare on the tracker's support; whatever mass lies outside it must vanish
                got = {h: q for h, q in zip(hs, p) if q > 0}
                inside = 0.0
                for h, q in d.items():
                    assert abs(got.get(h, 0.0) - q) <= 1e-12
                    inside += got.get(h, 0.0)
                assert set(got) <= set(d) or sum(got.values()) - inside <= 1e-12
                checked += 1
                # indicators only ever switch off
                if not nb.terminal:
                    key = belief_key(nb)
                    if key not in seen:
                        seen.add(key)
                        stack.append((nb, d))
    return checked
