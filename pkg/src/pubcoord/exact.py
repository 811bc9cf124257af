"""Ground-truth solvers.

* :func:`brute_force_optimal` maximises the exact expected return over
  deterministic joint policies, either by plain enumeration or by a
  depth-first branch and bound over decisions.
* :func:`build_belief_graph` + :func:`backward_induction` solve the
  coordinator's belief MDP over every prescription vector.
* :class:`ExactSolver` is the same backward induction computed lazily,
  enumerating only prescription rows that can matter, for games whose
  full graph is too large to materialise.
* :func:`pubmdp_q_learning` is tabular Q-learning on the belief graph.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fosg import (
    FiniteGame,
    GameError,
    History,
    JointPolicy,
    extend_info,
    info_state,
    information_sets,
    public_state_of_info,
    root_histories,
)
from .pubmdp import (
    DEFAULT_CAP,
    CapExceeded,
    PublicBelief,
    StepCache,
    belief_key,
    consistent_rows,
    enumerate_prescription_vectors,
    initial_belief,
    live_mask,
    reconstruct_history_distribution,
)
from .schedules import LinearSchedule

TOL = 1e-9


# ---------------------------------------------------------------------------
# brute force over joint policies
# ---------------------------------------------------------------------------


def evaluate_deterministic(game: FiniteGame, choices: Sequence[dict]) -> float:
    """Exact return of a deterministic joint policy given as ``{info_state: action}`` per player.

    Information states missing from ``choices`` play their first legal action.
    """
    n = game.num_players

    def value(h: History, infos: tuple) -> float:
        if game.is_terminal(h.world):
            return 0.0
        a = tuple(
            choices[i].get(infos[i], min(game.legal_actions(h.world, i))) for i in range(n)
        )
        total = 0.0
        for o in game.transition(h.world, a):
            if o.prob > 0:
                nxt = tuple(extend_info(infos[i], a[i], o.private[i], o.public) for i in range(n))
                total += o.prob * (o.reward + value(h.child(a, o), nxt))
        return total

    return sum(h.chance * value(h, tuple(info_state(h, i) for i in range(n))) for h in root_histories(game))


@dataclass
class BruteForceResult:
    value: float
    policy: JointPolicy
    choices: tuple
    evaluated: int


def brute_force_optimal(game: FiniteGame, cap: int = 10**8, prune: bool = False) -> BruteForceResult:
    """Best deterministic joint policy.

    ``prune=False`` evaluates every joint policy in mixed-radix order and
    raises :class:`CapExceeded` when there are more than ``cap``.
    ``prune=True`` runs an exact branch and bound whose optimistic bound
    lets every player see the full history for the remaining decisions.
    """
    if prune:
        return _branch_and_bound(game)
    slots = information_sets(game)
    total = math.prod(len(la) for _, _, la in slots)
    if total > cap:
        raise CapExceeded(f"{total} deterministic joint policies exceed cap {cap}")
    best, best_choice, count = -math.inf, None, 0
    for combo in itertools.product(*(la for _, _, la in slots)):
        choices = tuple({} for _ in range(game.num_players))
        for (i, s, _), a in zip(slots, combo):
            choices[i][s] = a
        v = evaluate_deterministic(game, choices)
        count += 1
        if v > best + 1e-12:
            best, best_choice = v, choices
    return BruteForceResult(best, JointPolicy.deterministic(best_choice), best_choice, count)


def _branch_and_bound(game: FiniteGame) -> BruteForceResult:
    n = game.num_players
    q_cache: dict = {}

    def legal(h):
        return tuple(tuple(sorted(game.legal_actions(h.world, i))) for i in range(n))

    def qtensor(h: History) -> np.ndarray:
        key = (h.worlds, h.actions)
        q = q_cache.get(key)
        if q is None:
            la = legal(h)
            q = np.zeros(tuple(len(x) for x in la))
            for pos in itertools.product(*(range(len(x)) for x in la)):
                a = tuple(la[i][p] for i, p in enumerate(pos))
                for o in game.transition(h.world, a):
                    if o.prob > 0:
                        c = h.child(a, o)
                        q[pos] += o.prob * (o.reward + (0.0 if game.is_terminal(c.world) else qtensor(c).max()))
            q_cache[key] = q
        return q

    best = {"value": -math.inf, "choices": None, "evaluated": 0}
    chosen: list[dict] = [{} for _ in range(n)]
    # how often each action is already used by a player within one public state;
    # ties in the bound prefer rarely used actions, which reaches signalling
    # policies early. Ordering only: the search stays exhaustive.
    usage: dict = {}

    def layer(active: list, acc: float) -> None:
        # active: (history, infos, reach)
        slots = sorted({(i, infos[i]) for _, infos, _ in active for i in range(n)})
        slot_hist: dict = {s: [] for s in slots}
        for k, (_, infos, _) in enumerate(active):
            for i in range(n):
                slot_hist[(i, infos[i])].append(k)
        legals = [legal(h) for h, _, _ in active]
        qs = [qtensor(h) for h, _, _ in active]
        reach = np.array([r for _, _, r in active])
        assigned: dict = {}

        def hist_ub(k: int) -> float:
            infos = active[k][1]
            idx = tuple(assigned.get((i, infos[i]), slice(None)) for i in range(n))
            return float(np.max(qs[k][idx]))

        ub = np.array([qs[k].max() for k in range(len(active))])

        def dfs(j: int) -> None:
            if j == len(slots):
                finish()
                return
            slot = slots[j]
            i, s = slot
            ks = slot_hist[slot]
            first = ks[0]
            la = legals[first][i]
            options = []
            for pos in range(len(la)):
                assigned[slot] = pos
                new = [hist_ub(k) for k in ks]
                bound = acc + float(reach @ ub) + sum(reach[k] * (v - ub[k]) for k, v in zip(ks, new))
                options.append((bound, pos, new))
            del assigned[slot]
            used = usage.setdefault((i, public_state_of_info(s)), {})
            options.sort(key=lambda t: (-round(t[0], 12), used.get(t[1], 0), t[1]))
            for bound, pos, new in options:
                if bound <= best["value"] + 1e-12:
                    continue
                old = ub[ks].copy()
                assigned[slot] = pos
                ub[ks] = new
                chosen[i][s] = la[pos]
                used[pos] = used.get(pos, 0) + 1
                dfs(j + 1)
                used[pos] -= 1
                del assigned[slot]
                del chosen[i][s]
                ub[ks] = old

        def finish() -> None:
            nxt, add = [], 0.0
            for k, (h, infos, r) in enumerate(active):
                a = tuple(legals[k][i][assigned[(i, infos[i])]] for i in range(n))
                for o in game.transition(h.world, a):
                    if o.prob <= 0:
                        continue
                    add += r * o.prob * o.reward
                    c = h.child(a, o)
                    if not game.is_terminal(c.world):
                        ninfos = tuple(extend_info(infos[i], a[i], o.private[i], o.public) for i in range(n))
                        nxt.append((c, ninfos, r * o.prob))
            if nxt:
                layer(nxt, acc + add)
            else:
                best["evaluated"] += 1
                if acc + add > best["value"] + 1e-12:
                    best["value"] = acc + add
                    best["choices"] = tuple(dict(c) for c in chosen)

        dfs(0)

    roots = root_histories(game)
    layer([(h, tuple(info_state(h, i) for i in range(n)), h.chance) for h in roots], 0.0)
    choices = best["choices"]
    return BruteForceResult(best["value"], JointPolicy.deterministic(choices), choices, best["evaluated"])


# ---------------------------------------------------------------------------
# materialised belief graph
# ---------------------------------------------------------------------------


@dataclass
class BeliefNode:
    belief: PublicBelief
    key: bytes
    vectors: list = field(default_factory=list)
    rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # per vector: (observation codes, probabilities, child node ids)
    branches: list = field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return self.belief.terminal


@dataclass
class BeliefGraph:
    game: FiniteGame
    nodes: list
    index: dict

    @property
    def root(self) -> BeliefNode:
        return self.nodes[0]

    def __len__(self) -> int:
        return len(self.nodes)

    def node(self, belief: PublicBelief) -> BeliefNode:
        return self.nodes[self.index[belief_key(belief)]]


def build_belief_graph(game: FiniteGame, cap: int = DEFAULT_CAP) -> BeliefGraph:
    """All beliefs reachable under any prescriptions; nodes ordered by depth."""
    root = initial_belief(game)
    nodes = [BeliefNode(root, belief_key(root))]
    index = {nodes[0].key: 0}
    k = 0
    while k < len(nodes):
        node = nodes[k]
        k += 1
        if node.terminal:
            continue
        node.vectors = enumerate_prescription_vectors(game, node.belief, cap)
        cache = StepCache(game, node.belief)
        rewards = []
        for gamma in node.vectors:
            res = cache(gamma)
            rewards.append(res.reward)
            obs, probs, kids = [], [], []
            for o, p in res.obs_probs.items():
                nb = res.next_beliefs[o]
                key = belief_key(nb)
                if key not in index:
                    index[key] = len(nodes)
                    nodes.append(BeliefNode(nb, key))
                obs.append(o)
                probs.append(p)
                kids.append(index[key])
            node.branches.append((tuple(obs), np.array(probs), np.array(kids, dtype=np.intp)))
        node.rewards = np.array(rewards)
    return BeliefGraph(game, nodes, index)


def backward_induction(graph: BeliefGraph) -> tuple[np.ndarray, np.ndarray]:
    """Optimal value and first-index greedy prescription index for every node."""
    values = np.zeros(len(graph))
    greedy = np.full(len(graph), -1, dtype=np.intp)
    for k in range(len(graph) - 1, -1, -1):
        node = graph.nodes[k]
        if node.terminal:
            continue
        q = q_values(node, values)
        g = int(np.argmax(q))
        values[k], greedy[k] = q[g], g
    return values, greedy


def q_values(node: BeliefNode, values: np.ndarray) -> np.ndarray:
    return node.rewards + np.array([p @ values[kids] for _, p, kids in node.branches])


def value_iteration_sweeps(graph: BeliefGraph, max_sweeps: int = 100) -> tuple[np.ndarray, int]:
    """Synchronous Bellman sweeps from V = 0; returns values and sweeps until no change."""
    values = np.zeros(len(graph))
    for sweep in range(1, max_sweeps + 1):
        new = np.array([0.0 if nd.terminal else q_values(nd, values).max() for nd in graph.nodes])
        if np.array_equal(new, values):
            return values, sweep - 1
        values = new
    return values, max_sweeps


def graph_policy_value(graph: BeliefGraph, choice: Sequence[int]) -> np.ndarray:
    """Expected return from every node when node ``k`` plays vector ``choice[k]``."""
    values = np.zeros(len(graph))
    for k in range(len(graph) - 1, -1, -1):
        node = graph.nodes[k]
        if node.terminal:
            continue
        g = choice[k]
        _, p, kids = node.branches[g]
        values[k] = node.rewards[g] + p @ values[kids]
    return values


# ---------------------------------------------------------------------------
# lazy backward induction
# ---------------------------------------------------------------------------


class ExactSolver:
    """Optimal belief values computed on demand with memoisation.

    Only rows whose indicator is 1 are enumerated; every other row is set
    to its first legal action, which is also what the lexicographically
    first optimal vector uses there, so greedy choices agree with
    :func:`backward_induction` on the full graph. The last decision layer
    is evaluated with vectorised reward tables.
    """

    def __init__(self, game: FiniteGame, cap: int = DEFAULT_CAP):
        self.game = game
        self.cap = cap
        self._memo: dict[bytes, tuple[float, tuple | None]] = {}
        self._reward_tables: dict = {}

    def value(self, belief: PublicBelief) -> float:
        return self._solve(belief)[0]

    def greedy(self, belief: PublicBelief) -> tuple:
        return self._solve(belief)[1]

    def __len__(self) -> int:
        return len(self._memo)

    def _solve(self, belief: PublicBelief):
        if belief.terminal:
            return 0.0, None
        key = belief_key(belief)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        game = self.game
        ps = belief.public_set(game)
        rows = consistent_rows(ps, belief)
        legal = [ps.row_legal[r] for r in rows]
        count = math.prod(len(la) for la in legal)
        if count > self.cap:
            raise CapExceeded(f"{count} consistent prescriptions exceed cap {self.cap}")
        base = [la[0] for la in ps.row_legal]
        result = None
        if ps.depth >= game.horizon - 1:
            result = self._last_layer(belief, ps, rows, legal, base)
        if result is None:
            cache = StepCache(game, belief)
            best, best_g = -math.inf, None
            for combo in itertools.product(*legal):
                gamma = list(base)
                for r, a in zip(rows, combo):
                    gamma[r] = a
                res = cache(gamma)
                q = res.reward + sum(p * self._solve(res.next_beliefs[o])[0] for o, p in res.obs_probs.items())
                if q > best:
                    best, best_g = q, tuple(gamma)
            result = (best, best_g)
        self._memo[key] = result
        return result

    def _last_layer(self, belief, ps, rows, legal, base):
        game = self.game
        _, post = reconstruct_history_distribution(game, belief)
        live = np.flatnonzero(live_mask(ps, belief))
        row_pos = {int(r): j for j, r in enumerate(rows)}
        shape = tuple(len(la) for la in legal)
        combos = np.indices(shape).reshape(len(shape), -1)
        q = np.zeros(combos.shape[1])
        for k in live:
            table = self._reward_table(ps, k)
            if table is None:
                return None
            idx = tuple(combos[row_pos[int(r)]] for r in ps.row_of_history[k])
            q += post[k] * table[idx]
        g = int(np.argmax(q))
        gamma = list(base)
        for j, r in enumerate(rows):
            gamma[r] = legal[j][combos[j, g]]
        return float(q[g]), tuple(gamma)

    def _reward_table(self, ps, k):
        """Expected immediate reward per joint action at history ``k``; None if any branch continues."""
        key = (ps.public_state, k)
        if key in self._reward_tables:
            return self._reward_tables[key]
        game = self.game
        h = ps.histories[k]
        la = [ps.legal[i][ps.info_index[k, i]] for i in range(game.num_players)]
        table = np.zeros(tuple(len(x) for x in la))
        for pos in itertools.product(*(range(len(x)) for x in la)):
            a = tuple(la[i][p] for i, p in enumerate(pos))
            for o in game.transition(h.world, a):
                if o.prob <= 0:
                    continue
                if o.public != game.terminal_obs:
                    self._reward_tables[key] = None
                    return None
                table[pos] += o.prob * o.reward
        self._reward_tables[key] = table
        return table


def solve_pubmdp(game: FiniteGame, cap: int = DEFAULT_CAP) -> tuple[float, ExactSolver]:
    solver = ExactSolver(game, cap)
    return solver.value(initial_belief(game)), solver


# ---------------------------------------------------------------------------
# prescriptions -> decentralised joint policy
# ---------------------------------------------------------------------------


def decentralize(game: FiniteGame, choose: Callable[[PublicBelief], tuple]) -> JointPolicy:
    """Joint policy obtained by running the coordinator ``choose`` on every reachable belief.

    Each player replays the coordinator on public observations and reads
    its own row; information states never reached keep their first legal
    action.
    """
    from .pubmdp import step

    choices = [dict() for _ in range(game.num_players)]
    stack = [initial_belief(game)]
    while stack:
        b = stack.pop()
        if b.terminal:
            continue
        gamma = choose(b)
        ps = b.public_set(game)
        for i in range(game.num_players):
            for j, s in enumerate(ps.info_states[i]):
                choices[i][s] = gamma[ps.offsets[i] + j]
        res = step(game, b, gamma, build_terminal=False)
        for o in sorted(res.obs_probs, reverse=True):
            nb = res.next_beliefs[o]
            if nb is not None and not nb.terminal:
                stack.append(nb)
    return JointPolicy.deterministic(choices)


# ---------------------------------------------------------------------------
# tabular Q-learning in the belief MDP
# ---------------------------------------------------------------------------


@dataclass
class QLearningResult:
    curve: list  # (episode, greedy value)
    final_value: float
    best_value: float
    q: list


def greedy_choice(q: list) -> list:
    return [int(np.argmax(x)) if len(x) else -1 for x in q]


def pubmdp_q_learning(
    game: FiniteGame,
    episodes: int,
    alpha: Callable[[int], float] | float,
    epsilon: Callable[[int], float] | float,
    rng: np.random.Generator,
    graph: BeliefGraph | None = None,
    eval_every: int = 1,
    q_init: list | None = None,
    target: float | None = None,
    deadline: float | None = None,
) -> QLearningResult:
    """Episodic Q-learning over ``(belief, prescription index)``.

    The behaviour policy is epsilon-greedy; the reward of a step is its
    expected reward under the belief, observations are sampled, and
    terminal beliefs bootstrap with 0. ``alpha`` and ``epsilon`` are
    schedules (callables of the episode index) or constants, in which
    case they decay linearly to 0 over ``episodes``. With ``target`` set,
    training stops at the first evaluation whose greedy value reaches it
    (within 1e-9); with ``deadline`` (a ``time.perf_counter`` value) it
    stops at the first evaluation past it.
    """
    if graph is None:
        graph = build_belief_graph(game)
    if not callable(alpha):
        alpha = LinearSchedule(alpha, episodes)
    if not callable(epsilon):
        epsilon = LinearSchedule(epsilon, episodes)
    nodes = graph.nodes
    q = [np.array(x, dtype=float) for x in q_init] if q_init is not None else [np.zeros(len(nd.vectors)) for nd in nodes]
    rewards = [nd.rewards for nd in nodes]
    branches = [[(np.cumsum(p), kids) for _, p, kids in nd.branches] for nd in nodes]
    terminal = [nd.terminal for nd in nodes]

    curve = []
    best = -math.inf

    def evaluate(ep: int) -> None:
        nonlocal best
        v = float(graph_policy_value(graph, greedy_choice(q))[0])
        best = max(best, v)
        curve.append((ep, v))

    evaluate(0)
    solved_at_start = target is not None and best >= target - TOL
    for ep in range(0 if solved_at_start else episodes):
        a_t, e_t = alpha(ep), epsilon(ep)
        k = 0
        while not terminal[k]:
            qk = q[k]
            g = int(rng.integers(len(qk))) if rng.random() < e_t else int(np.argmax(qk))
            cdf, kids = branches[k][g]
            j = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
            nxt = int(kids[min(j, len(kids) - 1)])
            td_target = rewards[k][g] + (0.0 if terminal[nxt] else float(q[nxt].max()))
            qk[g] += a_t * (td_target - qk[g])
            k = nxt
        if (ep + 1) % eval_every == 0 or ep + 1 == episodes:
            evaluate(ep + 1)
            if target is not None and best >= target - TOL:
                break
            if deadline is not None and time.perf_counter() >= deadline:
                break
    final = curve[-1][1]
    return QLearningResult(curve, final, best, q)


def optimal_q_table(graph: BeliefGraph) -> list:
    values, _ = backward_induction(graph)
    return [q_values(nd, values) if not nd.terminal else np.zeros(0) for nd in graph.nodes]


def check_cap(game: FiniteGame, cap: int) -> None:
    total = math.prod(len(la) for _, _, la in information_sets(game))
    if total > cap:
        raise CapExceeded(f"{total} joint policies exceed cap {cap}")


__all__ = [
    "BeliefGraph",
    "BeliefNode",
    "BruteForceResult",
    "ExactSolver",
    "GameError",
    "QLearningResult",
    "backward_induction",
    "brute_force_optimal",
    "build_belief_graph",
    "decentralize",
    "evaluate_deterministic",
    "graph_policy_value",
    "optimal_q_table",
    "pubmdp_q_learning",
    "solve_pubmdp",
    "value_iteration_sweeps",
]
