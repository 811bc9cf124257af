"""Tabular independent-learning baselines: IQL, HQL, VDN and SAD.

Each player keeps its own Q-table over its information states. Episodes
are sampled in the underlying game; a player only learns at steps where it
has more than one legal action. Targets accumulate the common reward
until the player's next decision:

* ``iql`` – ``Q += alpha * delta``;
* ``hql`` – as IQL but with rate ``beta`` when ``delta < 0``;
* ``vdn`` – one temporal-difference error per time step on the sum of the
  acting players' values, bootstrapping from the next step's acting
  players, applied to each summand;
* ``sad`` – IQL on information states augmented with teammates' greedy
  actions at their earlier decisions (the executed action may differ
  while exploring).

Greedy play (epsilon = 0) is scored exactly with :func:`evaluate_joint_policy`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .fosg import (
    FiniteGame,
    GameError,
    JointPolicy,
    evaluate_joint_policy,
    extend_info,
    info_state,
    root_histories,
)
from .schedules import LinearSchedule

ALGORITHMS = ("iql", "hql", "vdn", "sad")


@dataclass
class BaselineConfig:
    algorithm: str = "iql"
    epsilon: float = 0.1
    alpha: float = 0.1
    beta: float | None = None
    episodes: int = 10_000
    decay_episodes: int | None = None
    eval_every: int = 100

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise GameError(f"unknown baseline {self.algorithm!r}; choose from {ALGORITHMS}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise GameError("epsilon must lie in [0, 1]")
        if self.alpha < 0:
            raise GameError("alpha must be non-negative")
        if self.beta is not None and not 0.0 <= self.beta <= self.alpha:
            raise GameError("beta must satisfy 0 <= beta <= alpha")
        if self.episodes < 0:
            raise GameError("episodes must be non-negative")
        if self.eval_every < 1:
            raise GameError("eval_every must be at least 1")

    @property
    def horizon(self) -> int:
        return self.episodes if self.decay_episodes is None else self.decay_episodes


@dataclass
class BaselineRun:
    curve: list = field(default_factory=list)  # (episode, greedy value, best value)
    best_value: float = -math.inf
    tables: list = field(default_factory=list)


class _Agents:
    def __init__(self, n: int):
        self.tables: list[dict] = [dict() for _ in range(n)]

    def q(self, i: int, key, legal: tuple) -> np.ndarray:
        t = self.tables[i]
        row = t.get(key)
        if row is None:
            row = t[key] = np.zeros(len(legal))
        return row


def _sample(outcomes, rng):
    probs = np.array([o.prob for o in outcomes])
    return outcomes[int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right").clip(0, len(outcomes) - 1))]


def _episode(game: FiniteGame, agents: _Agents, cfg: BaselineConfig, eps: float, rng) -> list:
    """Sample one episode; returns per-step records ``(acting, keys, actions, legal, reward)``."""
    n = game.num_players
    roots = root_histories(game)
    h = roots[int(np.searchsorted(np.cumsum([r.chance for r in roots]), rng.random(), side="right").clip(0, len(roots) - 1))]
    infos = [info_state(h, i) for i in range(n)]
    seen_greedy: list[tuple] = [() for _ in range(n)]  # SAD: teammates' greedy actions observed so far
    steps = []
    while not game.is_terminal(h.world):
        legal = [tuple(sorted(game.legal_actions(h.world, i))) for i in range(n)]
        acting = [i for i in range(n) if len(legal[i]) > 1]
        keys = [(infos[i], seen_greedy[i]) if cfg.algorithm == "sad" else infos[i] for i in range(n)]
        actions, greedy = [], []
        for i in range(n):
            if i not in acting:
                actions.append(legal[i][0])
                greedy.append(legal[i][0])
                continue
            row = agents.q(i, keys[i], legal[i])
            g = int(np.argmax(row))
            a = int(rng.integers(len(legal[i]))) if rng.random() < eps else g
            actions.append(legal[i][a])
            greedy.append(legal[i][g])
        joint = tuple(actions)
        o = _sample([x for x in game.transition(h.world, joint) if x.prob > 0], rng)
        steps.append((acting, keys, [legal[i].index(actions[i]) for i in range(n)], legal, o.reward))
        if cfg.algorithm == "sad":
            for i in range(n):
                seen_greedy[i] = seen_greedy[i] + tuple(greedy[j] for j in acting if j != i)
        infos = [extend_info(infos[i], joint[i], o.private[i], o.public) for i in range(n)]
        h = h.child(joint, o)
    return steps


def _update_independent(agents: _Agents, steps: list, alpha: float, beta: float) -> None:
    n = len(agents.tables)
    # for every player, the time steps at which it decides
    decisions = [[t for t, s in enumerate(steps) if i in s[0]] for i in range(n)]
    rewards = np.array([s[4] for s in steps])
    for t, (acting, keys, acts, legal, _) in enumerate(steps):
        for i in acting:
            later = [u for u in decisions[i] if u > t]
            nxt = later[0] if later else len(steps)
            target = float(rewards[t:nxt].sum())
            if later:
                target += float(agents.q(i, steps[nxt][1][i], steps[nxt][3][i]).max())
            row = agents.q(i, keys[i], legal[i])
            delta = target - row[acts[i]]
            row[acts[i]] += (alpha if delta >= 0 else beta) * delta


def _update_vdn(agents: _Agents, steps: list, alpha: float) -> None:
    for t, (acting, keys, acts, legal, r) in enumerate(steps):
        if not acting:
            continue
        total = sum(agents.q(i, keys[i], legal[i])[acts[i]] for i in acting)
        target = r
        if t + 1 < len(steps):
            a2, k2, _, l2, _ = steps[t + 1]
            target += sum(float(agents.q(i, k2[i], l2[i]).max()) for i in a2)
        delta = target - total
        for i in acting:
            agents.q(i, keys[i], legal[i])[acts[i]] += alpha * delta


def greedy_policy(game: FiniteGame, agents: _Agents, algorithm: str) -> JointPolicy:
    """Deterministic joint policy of greedy play.

    For SAD the greedy keys are rebuilt along every history; an
    information state reached with two different augmentations cannot be
    decentralised and raises :class:`GameError`.
    """
    n = game.num_players
    choices: list[dict] = [dict() for _ in range(n)]

    def visit(h, infos, seen):
        if game.is_terminal(h.world):
            return
        legal = [tuple(sorted(game.legal_actions(h.world, i))) for i in range(n)]
        acting = [i for i in range(n) if len(legal[i]) > 1]
        joint = []
        for i in range(n):
            if i not in acting:
                a = legal[i][0]
            else:
                key = (infos[i], seen[i]) if algorithm == "sad" else infos[i]
                row = agents.tables[i].get(key)
                a = legal[i][int(np.argmax(row))] if row is not None else legal[i][0]
            prev = choices[i].setdefault(infos[i], a)
            if prev != a:
                raise GameError("greedy SAD play depends on more than the information state")
            joint.append(a)
        joint = tuple(joint)
        nseen = [seen[i] + tuple(joint[j] for j in acting if j != i) for i in range(n)] if algorithm == "sad" else seen
        for o in game.transition(h.world, joint):
            if o.prob > 0:
                visit(h.child(joint, o), [extend_info(infos[i], joint[i], o.private[i], o.public) for i in range(n)], nseen)

    for h in root_histories(game):
        visit(h, [info_state(h, i) for i in range(n)], [() for _ in range(n)])
    return JointPolicy.deterministic(choices)


def train_baseline(
    game: FiniteGame,
    config: BaselineConfig,
    rng: np.random.Generator,
    target: float | None = None,
    deadline: float | None = None,
) -> BaselineRun:
    """Train one baseline; the curve records greedy and running-best values every ``eval_every`` episodes.

    Stops early at the first evaluation reaching ``target`` (within 1e-9)
    or past ``deadline`` (a ``time.perf_counter`` value).
    """
    config.validate()
    agents = _Agents(game.num_players)
    eps_s = LinearSchedule(config.epsilon, config.horizon)
    alpha_s = LinearSchedule(config.alpha, config.horizon)
    ratio = 1.0 if config.beta is None or config.alpha == 0 else config.beta / config.alpha
    run = BaselineRun(tables=agents.tables)

    def evaluate(ep) -> bool:
        v = evaluate_joint_policy(game, greedy_policy(game, agents, config.algorithm))
        run.best_value = max(run.best_value, v)
        run.curve.append((ep, v, run.best_value))
        if deadline is not None and time.perf_counter() >= deadline:
            return True
        return target is not None and run.best_value >= target - 1e-9

    if evaluate(0):
        return run
    for ep in range(config.episodes):
        eps, alpha = eps_s(ep), alpha_s(ep)
        steps = _episode(game, agents, config, eps, rng)
        if config.algorithm == "vdn":
            _update_vdn(agents, steps, alpha)
        else:
            beta = alpha * ratio if config.algorithm == "hql" else alpha
            _update_independent(agents, steps, alpha, beta)
        if (ep + 1) % config.eval_every == 0 or ep + 1 == config.episodes:
            if evaluate(ep + 1):
                break
    return run
