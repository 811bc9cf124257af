"""Finite common-payoff games with factored observations.

A game is described by its initial chance distribution, per-world legal
actions, and a transition function returning :class:`Outcome` records.
Everything else (histories, information states, public states, public
sets) is derived here and cached per game instance.

Information states are nested tuples ``((priv0, pub0), a0, (priv1, pub1), a1, ...)``
and public states are tuples of public observation codes. Both are plain
hashable, sortable values.
"""

from __future__ import annotations

import abc
import itertools
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator, Mapping, Sequence

import numpy as np

World = Hashable
JointAction = tuple
InfoState = tuple
PublicState = tuple

NOOP = 0
PROB_TOL = 1e-12


class GameError(ValueError):
    """Invalid game description or invalid query against a game."""


class HorizonExceeded(GameError):
    pass


@dataclass(frozen=True)
class Outcome:
    world: World
    prob: float
    reward: float
    private: tuple
    public: int


class FiniteGame(abc.ABC):
    """Base class for explicit finite common-payoff FOSGs.

    Subclasses set ``name``, ``num_players``, ``horizon``,
    ``public_obs_names`` and ``terminal_obs`` and implement the four
    abstract methods. Turn-taking games give idle players the single
    legal action :data:`NOOP`.
    """

    name: str = "game"
    num_players: int = 1
    horizon: int = 1
    terminal_obs: int = 1
    public_obs_names: tuple = ("start", "end")

    @abc.abstractmethod
    def initial_outcomes(self) -> Sequence[Outcome]:
        """Chance distribution over the first world, with its observations."""

    @abc.abstractmethod
    def legal_actions(self, world: World, player: int) -> tuple:
        ...

    @abc.abstractmethod
    def is_terminal(self, world: World) -> bool:
        ...

    @abc.abstractmethod
    def transition(self, world: World, joint_action: JointAction) -> Sequence[Outcome]:
        ...

    def joint_actions(self, world: World) -> Iterator[JointAction]:
        return itertools.product(
            *(self.legal_actions(world, i) for i in range(self.num_players))
        )

    def batch_outcomes(self, world: World, joint_actions: np.ndarray) -> tuple[np.ndarray, dict]:
        """Expected reward and public-observation probabilities for many joint actions.

        ``joint_actions`` is an ``(M, num_players)`` integer array. Returns
        ``(rewards, {obs: probs})`` with arrays of length ``M``. The default
        calls :meth:`transition` once per distinct row; games with a closed
        form may override it.
        """
        joint_actions = np.asarray(joint_actions)
        uniq, inverse = np.unique(joint_actions, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        rewards = np.zeros(len(uniq))
        obs: dict[int, np.ndarray] = {}
        for u, row in enumerate(uniq):
            for o in self.transition(world, tuple(int(x) for x in row)):
                if o.prob <= 0:
                    continue
                rewards[u] += o.prob * o.reward
                obs.setdefault(o.public, np.zeros(len(uniq)))[u] += o.prob
        return rewards[inverse], {k: v[inverse] for k, v in sorted(obs.items())}

    @property
    def num_public_obs(self) -> int:
        return len(self.public_obs_names)

    @property
    def tree(self) -> "PublicTree":
        try:
            return self.__dict__["_tree"]
        except KeyError:
            tree = self.__dict__["_tree"] = PublicTree(self)
            return tree

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class TableGame(FiniteGame):
    """A game given by explicit tables; the in-memory construction API.

    ``transitions`` maps ``(world, joint_action)`` to a list of
    ``(next_world, prob, reward, private_obs_tuple, public_obs)`` tuples.
    ``legal`` maps a world to one tuple of legal actions per player;
    worlds missing from ``legal`` are terminal.
    """

    def __init__(
        self,
        num_players: int,
        initial: Sequence[tuple],
        legal: Mapping[World, Sequence[tuple]],
        transitions: Mapping[tuple, Sequence[tuple]],
        horizon: int,
        num_public_obs: int = 2,
        terminal_obs: int = 1,
        name: str = "table",
    ):
        self.name = name
        self.num_players = num_players
        self.horizon = horizon
        self.terminal_obs = terminal_obs
        self.public_obs_names = tuple(f"o{k}" for k in range(num_public_obs))
        self._initial = [Outcome(w, p, 0.0, tuple(priv), pub) for w, p, priv, pub in initial]
        self._legal = {w: tuple(tuple(a) for a in acts) for w, acts in legal.items()}
        self._transitions = {
            (w, tuple(a)): [Outcome(nw, p, r, tuple(priv), pub) for nw, p, r, priv, pub in outs]
            for (w, a), outs in transitions.items()
        }

    def initial_outcomes(self):
        return self._initial

    def legal_actions(self, world, player):
        return self._legal[world][player]

    def is_terminal(self, world):
        return world not in self._legal

    def transition(self, world, joint_action):
        return self._transitions[(world, tuple(joint_action))]


@dataclass(frozen=True)
class History:
    """A history ``(w0, a0, w1, ..., wt)`` plus cached per-step observations.

    Equality only looks at worlds and joint actions.
    """

    worlds: tuple
    actions: tuple = ()
    observations: tuple = field(default=(), compare=False)
    chance: float = field(default=1.0, compare=False)
    reward: float = field(default=0.0, compare=False)

    @property
    def world(self) -> World:
        return self.worlds[-1]

    @property
    def depth(self) -> int:
        return len(self.actions)

    def child(self, joint_action: JointAction, outcome: Outcome) -> "History":
        return History(
            self.worlds + (outcome.world,),
            self.actions + (tuple(joint_action),),
            self.observations + ((outcome.private, outcome.public),),
            self.chance * outcome.prob,
            self.reward + outcome.reward,
        )

    def prefixes(self) -> Iterator["History"]:
        for t in range(self.depth + 1):
            yield History(self.worlds[: t + 1], self.actions[:t], self.observations[: t + 1])


def info_state(history: History, player: int) -> InfoState:
    """Player ``player``'s projection ``(O^0, a^0, ..., O^t)`` of ``history``."""
    out = []
    for t, (priv, pub) in enumerate(history.observations):
        if t:
            out.append(history.actions[t - 1][player])
        out.append((priv[player], pub))
    return tuple(out)


def public_state(history: History) -> PublicState:
    return tuple(pub for _, pub in history.observations)


def public_state_of_info(s: InfoState) -> PublicState:
    return tuple(o[1] for o in s[::2])


def extend_info(s: InfoState, action: int, priv: int, pub: int) -> InfoState:
    return s + (action, (priv, pub))


def root_histories(game: FiniteGame) -> list[History]:
    return [
        History((o.world,), (), ((o.private, o.public),), o.prob, 0.0)
        for o in game.initial_outcomes()
        if o.prob > 0
    ]


class PublicSet:
    """All chance-reachable histories sharing one public state.

    Attributes
    ----------
    histories:
        Histories in canonical order (sorted by per-player info-state index).
    chance:
        Chance reach of each history.
    info_states:
        Per player, the sorted information states of this public state.
    info_index:
        ``(n_histories, num_players)`` index of each history's info states.
    offsets, row_legal:
        Prescription layout: rows are ordered by ``(player, info-state index)``;
        player ``i`` owns rows ``offsets[i]:offsets[i+1]``.
    parent_index, own_action:
        For non-root sets, per player, the parent info-state index in the
        parent public set and the player's own action that led here.
    """

    def __init__(self, game: FiniteGame, pub: PublicState, histories: list[History], parent=None):
        n = game.num_players
        self.game = game
        self.public_state = pub
        self.depth = len(pub) - 1
        self.terminal = pub[-1] == game.terminal_obs and self.depth > 0
        per_player = [sorted({info_state(h, i) for h in histories}) for i in range(n)]
        self.info_states = tuple(tuple(s) for s in per_player)
        lookup = [{s: k for k, s in enumerate(ss)} for ss in self.info_states]
        idx = np.array(
            [[lookup[i][info_state(h, i)] for i in range(n)] for h in histories], dtype=np.intp
        ).reshape(len(histories), n)
        order = np.lexsort(idx.T[::-1]) if len(histories) else np.arange(0)
        self.histories = tuple(histories[k] for k in order)
        self.info_index = idx[order]
        self.chance = np.array([h.chance for h in self.histories], dtype=float)
        self.info_lookup = lookup

        if self.terminal:
            self.legal = tuple(() for _ in range(n))
        else:
            legal = []
            for i in range(n):
                acts: list = [None] * len(self.info_states[i])
                for h, k in zip(self.histories, self.info_index[:, i]):
                    la = tuple(sorted(game.legal_actions(h.world, i)))
                    if not la:
                        raise GameError(f"no legal actions for player {i} at nonterminal {h.worlds}")
                    if acts[k] is None:
                        acts[k] = la
                    elif acts[k] != la:
                        raise GameError(
                            f"legal actions differ within information state {self.info_states[i][k]}"
                        )
                legal.append(tuple(acts))
            self.legal = tuple(legal)
        sizes = [len(ss) for ss in self.info_states]
        self.offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)]))
        self.row_legal = tuple(la for per in self.legal for la in per)

        self.parent = parent
        self.parent_index: tuple = ()
        self.own_action: tuple = ()
        if parent is not None:
            pidx, acts = [], []
            for i in range(n):
                pidx.append(np.array([parent.info_lookup[i][s[:-2]] for s in self.info_states[i]], dtype=np.intp))
                acts.append(np.array([s[-2] for s in self.info_states[i]], dtype=np.int64))
            self.parent_index = tuple(pidx)
            self.own_action = tuple(acts)

        self._children: dict | None = None
        self._row_of_history: np.ndarray | None = None

    @property
    def num_rows(self) -> int:
        return self.offsets[-1]

    @property
    def row_of_history(self) -> np.ndarray:
        """``(n_histories, num_players)`` prescription-row index per history."""
        if self._row_of_history is None:
            self._row_of_history = self.info_index + np.asarray(self.offsets[:-1], dtype=np.intp)
        return self._row_of_history

    def children(self) -> dict[int, "PublicSet"]:
        """Child public sets keyed by public observation (all joint actions)."""
        if self._children is None:
            if self.terminal:
                self._children = {}
                return self._children
            game = self.game
            groups: dict[int, list[History]] = {}
            for h in self.histories:
                if h.depth >= game.horizon:
                    raise HorizonExceeded(f"nonterminal history longer than horizon {game.horizon}: {h.worlds}")
                for a in game.joint_actions(h.world):
                    for o in game.transition(h.world, a):
                        if o.prob <= 0:
                            continue
                        if game.is_terminal(o.world) != (o.public == game.terminal_obs):
                            raise GameError("terminal transitions must emit exactly the terminal observation")
                        groups.setdefault(o.public, []).append(h.child(a, o))
            self._children = {
                obs: PublicSet(game, self.public_state + (obs,), hs, parent=self)
                for obs, hs in sorted(groups.items())
            }
        return self._children

    def child(self, obs: int) -> "PublicSet":
        try:
            return self.children()[obs]
        except KeyError:
            raise GameError(f"public observation {obs} unreachable from {self.public_state}") from None

    def __repr__(self) -> str:
        return f"<PublicSet {self.public_state} |I|={len(self.histories)}>"


class PublicTree:
    """Lazily expanded public tree of a game."""

    def __init__(self, game: FiniteGame):
        self.game = game
        roots = root_histories(game)
        if not roots:
            raise GameError("initial distribution has no positive-probability outcome")
        total = sum(h.chance for h in roots)
        if abs(total - 1.0) > PROB_TOL:
            raise GameError(f"initial distribution sums to {total}")
        pubs = {public_state(h) for h in roots}
        if len(pubs) != 1:
            raise GameError("initial public observation must be common to every deal")
        for h in roots:
            if game.is_terminal(h.world):
                raise GameError("initial world is terminal")
        self.root = PublicSet(game, pubs.pop(), roots)

    def get(self, pub: PublicState) -> PublicSet:
        if pub[:1] != self.root.public_state:
            raise GameError(f"unknown public state {pub}")
        node = self.root
        for obs in pub[1:]:
            node = node.child(obs)
        return node

    def walk(self, include_terminal: bool = True) -> Iterator[PublicSet]:
        """Depth-first over public sets in public-state order.

        With ``include_terminal=False`` the last decision layer is not
        expanded, which keeps games with huge terminal layers cheap.
        """
        stack = [self.root]
        while stack:
            ps = stack.pop()
            if ps.terminal and not include_terminal:
                continue
            yield ps
            if ps.terminal:
                continue
            if not include_terminal and ps.depth >= self.game.horizon - 1:
                continue
            stack.extend(reversed(list(ps.children().values())))


def enumerate_histories(game: FiniteGame, include_terminal: bool = True) -> dict[PublicState, PublicSet]:
    """All chance-reachable histories grouped into public sets."""
    return {ps.public_state: ps for ps in game.tree.walk(include_terminal)}


def validate_game(game: FiniteGame) -> None:
    """Check distributions, the common-observation convention and the horizon."""
    for ps in game.tree.walk():
        if ps.terminal:
            continue
        for h in ps.histories:
            for a in game.joint_actions(h.world):
                outs = game.transition(h.world, a)
                total = sum(o.prob for o in outs)
                if abs(total - 1.0) > PROB_TOL:
                    raise GameError(f"transition {h.world}, {a} sums to {total}")
                worlds = [o.world for o in outs]
                if len(set(worlds)) != len(worlds):
                    raise GameError(f"duplicate next world in transition {h.world}, {a}")


# ---------------------------------------------------------------------------
# policies and evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointPolicy:
    """Per-player maps from information state to ``{action: prob}``.

    Information states missing from a table fall back to the first legal
    action (``fallback="first"``) or to uniform play (``"uniform"``).
    """

    tables: tuple
    fallback: str = "first"

    @classmethod
    def uniform(cls, num_players: int) -> "JointPolicy":
        return cls(tuple({} for _ in range(num_players)), "uniform")

    @classmethod
    def deterministic(cls, choices: Sequence[Mapping[InfoState, int]]) -> "JointPolicy":
        return cls(tuple({s: {a: 1.0} for s, a in c.items()} for c in choices), "first")

    def action_probs(self, player: int, s: InfoState, legal: Sequence[int]) -> list[tuple[int, float]]:
        dist = self.tables[player].get(s)
        if dist is None:
            if self.fallback == "uniform":
                return [(a, 1.0 / len(legal)) for a in legal]
            return [(min(legal), 1.0)]
        total = sum(dist.values())
        if abs(total - 1.0) > PROB_TOL:
            raise GameError(f"policy row for {s} sums to {total}")
        for a, p in dist.items():
            if p > 0 and a not in legal:
                raise GameError(f"illegal action {a} in policy row for {s}")
        return [(a, p) for a, p in dist.items() if p > 0]

    def prob(self, player: int, s: InfoState, action: int, legal: Sequence[int]) -> float:
        return dict(self.action_probs(player, s, legal)).get(action, 0.0)


def reach_contributions(game: FiniteGame, policy: JointPolicy, history: History) -> tuple[float, tuple]:
    """Chance contribution and each player's contribution to reaching ``history``."""
    contrib = [1.0] * game.num_players
    for t, a in enumerate(history.actions):
        prefix = History(history.worlds[: t + 1], history.actions[:t], history.observations[: t + 1])
        w = history.worlds[t]
        for i in range(game.num_players):
            legal = game.legal_actions(w, i)
            contrib[i] *= policy.prob(i, info_state(prefix, i), a[i], legal)
    return history.chance, tuple(contrib)


def _iter_joint(game: FiniteGame, policy: JointPolicy, h: History, infos: tuple) -> Iterator[tuple]:
    per_player = [
        policy.action_probs(i, infos[i], game.legal_actions(h.world, i)) for i in range(game.num_players)
    ]
    for combo in itertools.product(*per_player):
        p = 1.0
        for _, q in combo:
            p *= q
        if p > 0:
            yield tuple(a for a, _ in combo), p


def evaluate_joint_policy(game: FiniteGame, policy: JointPolicy) -> float:
    """Exact expected return of ``policy``."""
    n = game.num_players

    def value(h: History, infos: tuple) -> float:
        if game.is_terminal(h.world):
            return 0.0
        if h.depth >= game.horizon:
            raise HorizonExceeded(f"history exceeds horizon {game.horizon}")
        total = 0.0
        for a, pa in _iter_joint(game, policy, h, infos):
            for o in game.transition(h.world, a):
                if o.prob <= 0:
                    continue
                nxt = tuple(extend_info(infos[i], a[i], o.private[i], o.public) for i in range(n))
                total += pa * o.prob * (o.reward + value(h.child(a, o), nxt))
        return total

    return sum(h.chance * value(h, tuple(info_state(h, i) for i in range(n))) for h in root_histories(game))


def sample_episode_return(game: FiniteGame, policy: JointPolicy, rng: np.random.Generator) -> float:
    n = game.num_players
    roots = root_histories(game)
    h = roots[rng.choice(len(roots), p=[r.chance for r in roots])]
    infos = tuple(info_state(h, i) for i in range(n))
    ret = 0.0
    while not game.is_terminal(h.world):
        joint = []
        for i in range(n):
            acts = policy.action_probs(i, infos[i], game.legal_actions(h.world, i))
            k = rng.choice(len(acts), p=[p for _, p in acts]) if len(acts) > 1 else 0
            joint.append(acts[k][0])
        outs = [o for o in game.transition(h.world, tuple(joint)) if o.prob > 0]
        o = outs[rng.choice(len(outs), p=[x.prob for x in outs])] if len(outs) > 1 else outs[0]
        infos = tuple(extend_info(infos[i], joint[i], o.private[i], o.public) for i in range(n))
        h = h.child(tuple(joint), o)
        ret += o.reward
    return ret


def information_sets(game: FiniteGame) -> list[tuple[int, InfoState, tuple]]:
    """Every decision ``(player, info_state, legal_actions)`` of the game, in tree order."""
    out = []
    for ps in game.tree.walk(include_terminal=False):
        for i in range(game.num_players):
            for s, la in zip(ps.info_states[i], ps.legal[i]):
                out.append((i, s, la))
    return out


def dump_tree(game: FiniteGame) -> str:
    """Canonical text dump, one terminal history per line.

    Line format: ``worlds | joint actions | public observations | private observations | reward``.
    """
    lines = []
    for ps in game.tree.walk():
        if not ps.terminal:
            continue
        for h in ps.histories:
            worlds = " ".join(_fmt(w) for w in h.worlds)
            acts = " ".join(",".join(map(str, a)) for a in h.actions)
            pubs = " ".join(str(pub) for _, pub in h.observations)
            privs = " ".join(",".join(map(str, priv)) for priv, _ in h.observations)
            lines.append(f"{worlds} | {acts} | {pubs} | {privs} | {h.reward:g} | p={h.chance:.12g}")
    return "\n".join(lines) + "\n"


def _fmt(w) -> str:
    if isinstance(w, tuple):
        return "(" + ",".join("-" if x is None else str(x) for x in w) + ")"
    return str(w)


def iter_terminal_histories(game: FiniteGame) -> Iterable[History]:
    for ps in game.tree.walk():
        if ps.terminal:
            yield from ps.histories
