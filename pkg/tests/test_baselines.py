from __future__ import annotations

import numpy as np
import pytest
from conftest import chain_game

from pubcoord.baselines import ALGORITHMS, BaselineConfig, train_baseline
from pubcoord.exact import build_belief_graph, pubmdp_q_learning
from pubcoord.fosg import GameError
from pubcoord.oracle import load_golden
from pubcoord.schedules import LinearSchedule
from pubcoord.zoo import TINY_HANABI_VARIANTS, tiny_hanabi, trade_comm


def tables_equal(a, b):
    return all(
        ta.keys() == tb.keys() and all(np.array_equal(ta[k], tb[k]) for k in ta) for ta, tb in zip(a, b)
    )


def test_hql_with_beta_equal_alpha_is_iql():
    g = tiny_hanabi("C")
    iql = train_baseline(g, BaselineConfig("iql", 0.5, 0.1, episodes=2000, eval_every=100), np.random.default_rng(3))
    hql = train_baseline(
        g, BaselineConfig("hql", 0.5, 0.1, beta=0.1, episodes=2000, eval_every=100), np.random.default_rng(3)
    )
    assert iql.curve == hql.curve
    assert tables_equal(iql.tables, hql.tables)


def test_hql_with_small_beta_differs():
    g = tiny_hanabi("C")
    iql = train_baseline(g, BaselineConfig("iql", 0.5, 0.1, episodes=500), np.random.default_rng(3))
    hql = train_baseline(g, BaselineConfig("hql", 0.5, 0.1, beta=0.01, episodes=500), np.random.default_rng(3))
    assert not tables_equal(iql.tables, hql.tables)


def test_vdn_single_player_is_q_learning():
    """One player: the VDN sum has one term, so its values follow tabular Q-learning."""
    g = chain_game([[0.0, 1.0], [2.0, 0.0], [0.0, 3.0]])
    run = train_baseline(g, BaselineConfig("vdn", 0.3, 0.2, episodes=400, eval_every=50), np.random.default_rng(0))
    # replay the same episodes with a plain Q-learning update
    rng = np.random.default_rng(0)
    cfg = BaselineConfig("iql", 0.3, 0.2, episodes=400, eval_every=50)
    iql = train_baseline(g, cfg, rng)
    assert tables_equal(run.tables, iql.tables)
    assert run.curve == iql.curve


def test_sad_without_exploration_is_iql_on_augmented_keys():
    g = tiny_hanabi("A")
    sad = train_baseline(g, BaselineConfig("sad", 0.0, 0.1, episodes=300), np.random.default_rng(1))
    iql = train_baseline(g, BaselineConfig("iql", 0.0, 0.1, episodes=300), np.random.default_rng(1))
    # with greedy play the augmentation repeats the executed action, already in the info state
    for ts, ti in zip(sad.tables, iql.tables):
        assert {k[0] for k in ts} == set(ti)
        for k, row in ts.items():
            assert np.array_equal(row, ti[k[0]])
    assert sad.curve == iql.curve


def test_baselines_never_exceed_oracle_and_are_deterministic():
    golden = load_golden()
    for v in TINY_HANABI_VARIANTS:
        g = tiny_hanabi(v)
        for algo in ALGORITHMS:
            cfg = BaselineConfig(algo, 0.5, 0.1, beta=0.05 if algo == "hql" else None, episodes=600, eval_every=100)
            a = train_baseline(g, cfg, np.random.default_rng(7))
            b = train_baseline(g, cfg, np.random.default_rng(7))
            assert a.curve == b.curve
            assert all(val <= golden[g.name] + 1e-9 for _, val, _ in a.curve)
            bests = [best for *_, best in a.curve]
            assert bests == sorted(bests)


def test_baselines_run_on_simultaneous_trade_step():
    g = trade_comm(2, 2)
    for algo in ALGORITHMS:
        run = train_baseline(g, BaselineConfig(algo, 0.3, 0.2, episodes=300, eval_every=100), np.random.default_rng(0))
        assert 0.0 <= run.best_value <= 1.0 + 1e-9


def test_target_stops_early():
    g = tiny_hanabi("E")
    cfg = BaselineConfig("iql", 0.5, 0.2, episodes=20000, eval_every=50)
    run = train_baseline(g, cfg, np.random.default_rng(0), target=0.0)
    assert len(run.curve) == 1


def test_schedules_reach_zero():
    s = LinearSchedule(0.8, 100)
    assert s(0) == 0.8 and s(50) == pytest.approx(0.4) and s(100) == 0.0 and s(500) == 0.0
    cfg = BaselineConfig("iql", episodes=1000, decay_episodes=250)
    assert cfg.horizon == 250


def test_config_validation():
    for bad in [
        BaselineConfig("ia2c2"),
        BaselineConfig("hql", alpha=0.1, beta=0.2),
        BaselineConfig("iql", epsilon=2.0),
        BaselineConfig("iql", eval_every=0),
    ]:
        with pytest.raises(GameError):
            bad.validate()


def test_q_learning_solves_chain():
    g = chain_game([[0.0, 1.0], [2.0, 0.0]])
    res = pubmdp_q_learning(g, 500, 0.5, 0.5, np.random.default_rng(0), graph=build_belief_graph(g))
    assert res.best_value == pytest.approx(3.0)
