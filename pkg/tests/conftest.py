from __future__ import annotations

import os

import numpy as np
import pytest

from pubcoord.fosg import TableGame

ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("PUBCOORD_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="long run; set PUBCOORD_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def one_shot_game(payoff, num_players=1, name="one_shot"):
    """Horizon-1 game with one world; ``payoff`` maps joint actions to reward."""
    acts = sorted({a for joint in payoff for a in joint})
    sizes = [sorted({j[i] for j in payoff}) for i in range(num_players)]
    del acts
    return TableGame(
        num_players,
        [("w0", 1.0, (0,) * num_players, 0)],
        {"w0": tuple(tuple(s) for s in sizes)},
        {("w0", j): [("end", 1.0, float(r), (0,) * num_players, 1)] for j, r in payoff.items()},
        horizon=1,
        name=name,
    )


def chain_game(rewards_per_step, name="chain"):
    """One player, one world per step, two actions; reward table ``rewards_per_step[t][a]``."""
    T = len(rewards_per_step)
    legal = {t: ((0, 1),) for t in range(T)}
    trans = {}
    for t, rs in enumerate(rewards_per_step):
        nxt = t + 1 if t + 1 < T else "end"
        pub = 1 if t + 1 == T else 2
        for a in (0, 1):
            trans[(t, (a,))] = [(nxt, 1.0, float(rs[a]), (0,), pub)]
    return TableGame(1, [(0, 1.0, (0,), 0)], legal, trans, horizon=T, num_public_obs=3, name=name)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
