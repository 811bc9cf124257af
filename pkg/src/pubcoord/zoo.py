"""Tiny Hanabi suite and Trade Comm as :class:`FiniteGame` instances.

Registry names are ``tiny_hanabi:A`` ... ``tiny_hanabi:F`` and
``trade_comm:<items>x<utterances>``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np

from .fosg import (
    NOOP,
    FiniteGame,
    GameError,
    JointPolicy,
    Outcome,
    TableGame,
    information_sets,
)

START_OBS = 0
END_OBS = 1
NO_PRIVATE = 0

# payoff[card1][action1][card2][action2]; rows are player one's (card, action),
# columns player two's (card, action), exactly as the suite's tables are laid out.
_TABLES = {
    "A": [
        [0, 1, 0, 1],
        [0, 0, 3, 2],
        [3, 3, 2, 0],
        [3, 2, 3, 3],
    ],
    "B": [
        [1, 0, 0, 1],
        [1, 0, 0, 1],
        [0, 1, 1, 0],
        [0, 0, 1, 0],
    ],
    "C": [
        [3, 0, 2, 0],
        [0, 3, 3, 3],
        [2, 2, 0, 1],
        [3, 0, 0, 2],
    ],
    "D": [
        [3, 0, 3, 0],
        [1, 3, 3, 0],
        [3, 2, 0, 1],
        [0, 2, 0, 0],
    ],
    "E": [
        [10, 0, 0, 0, 0, 10],
        [4, 8, 4, 4, 8, 4],
        [10, 0, 0, 0, 0, 10],
        [0, 0, 10, 10, 0, 0],
        [4, 8, 4, 4, 8, 4],
        [0, 0, 0, 10, 0, 0],
    ],
    "F": [
        [0, 3, 0, 0, 3, 1],
        [3, 2, 0, 1, 2, 1],
        [0, 2, 1, 2, 0, 1],
        [0, 1, 1, 2, 0, 3],
        [1, 3, 0, 3, 3, 1],
        [1, 2, 2, 2, 3, 0],
    ],
}
_SIZES = {"A": (2, 2), "B": (2, 2), "C": (2, 2), "D": (2, 2), "E": (2, 3), "F": (3, 2)}

ROMAN = ("I", "II", "III")


@dataclass(frozen=True)
class TinyHanabiSpec:
    variant: str
    num_cards: int
    num_actions: int
    payoff: np.ndarray  # (card1, action1, card2, action2)

    @classmethod
    def from_variant(cls, variant: str) -> "TinyHanabiSpec":
        if variant not in _TABLES:
            raise GameError(f"unknown Tiny Hanabi variant {variant!r}")
        c, a = _SIZES[variant]
        table = np.array(_TABLES[variant], dtype=float).reshape(c, a, c, a)
        return cls(variant, c, a, table)


class TinyHanabi(FiniteGame):
    """Deal one card to each player, player one acts publicly, player two acts, game ends.

    Worlds are ``(card1, card2, action1)`` with ``None`` for steps not yet
    taken; the terminal world is ``(card1, card2, action1, action2)``.
    Private observation codes: ``0`` none, ``c + 1`` for card ``c``.
    Public codes: ``0`` start, ``1`` end, ``2 + a`` for player one's action ``a``.
    """

    num_players = 2
    horizon = 2
    terminal_obs = END_OBS

    def __init__(self, variant: str):
        self.spec = TinyHanabiSpec.from_variant(variant)
        self.name = f"tiny_hanabi:{variant}"
        n_a = self.spec.num_actions
        self.public_obs_names = ("start", "end") + tuple(f"P1:{chr(65 + a)}" for a in range(n_a))

    def initial_outcomes(self):
        c = self.spec.num_cards
        p = 1.0 / (c * c)
        return [
            Outcome((c1, c2, None), p, 0.0, (c1 + 1, c2 + 1), START_OBS)
            for c1 in range(c)
            for c2 in range(c)
        ]

    def is_terminal(self, world):
        return len(world) == 4

    def legal_actions(self, world, player):
        acting = 0 if world[2] is None else 1
        if player == acting:
            return tuple(range(self.spec.num_actions))
        return (NOOP,)

    def transition(self, world, joint_action):
        c1, c2, a1 = world
        if a1 is None:
            a = joint_action[0]
            return [Outcome((c1, c2, a), 1.0, 0.0, (NO_PRIVATE, NO_PRIVATE), 2 + a)]
        a2 = joint_action[1]
        r = float(self.spec.payoff[c1, a1, c2, a2])
        return [Outcome((c1, c2, a1, a2), 1.0, r, (NO_PRIVATE, NO_PRIVATE), END_OBS)]


@dataclass(frozen=True)
class TradeCommSpec:
    num_items: int
    num_utterances: int

    def __post_init__(self):
        if self.num_items < 1 or self.num_utterances < 1:
            raise GameError("trade_comm needs num_items >= 1 and num_utterances >= 1")

    @property
    def num_trades(self) -> int:
        return self.num_items * self.num_items


class TradeComm(FiniteGame):
    """Deal items, two public utterances, then a simultaneous private trade request.

    Worlds are ``(item1, item2, utter1, utter2)`` with ``None`` for steps not
    yet taken; terminal worlds append ``"T"``. Trade ``t`` means
    "give ``t // num_items``, get ``t % num_items``".
    Public codes: ``0`` start, ``1`` end, ``2 + u`` for utterance ``u``.
    """

    num_players = 2
    horizon = 3
    terminal_obs = END_OBS

    def __init__(self, num_items: int, num_utterances: int):
        self.spec = TradeCommSpec(num_items, num_utterances)
        self.name = f"trade_comm:{num_items}x{num_utterances}"
        self.public_obs_names = ("start", "end") + tuple(f"say{u}" for u in range(num_utterances))

    def trade(self, give: int, get: int) -> int:
        return give * self.spec.num_items + get

    def initial_outcomes(self):
        n = self.spec.num_items
        p = 1.0 / (n * n)
        return [
            Outcome((x1, x2, None, None), p, 0.0, (x1 + 1, x2 + 1), START_OBS)
            for x1 in range(n)
            for x2 in range(n)
        ]

    def is_terminal(self, world):
        return len(world) == 5

    def legal_actions(self, world, player):
        _, _, u1, u2 = world
        if u1 is None:
            return tuple(range(self.spec.num_utterances)) if player == 0 else (NOOP,)
        if u2 is None:
            return tuple(range(self.spec.num_utterances)) if player == 1 else (NOOP,)
        return tuple(range(self.spec.num_trades))

    def transition(self, world, joint_action):
        x1, x2, u1, u2 = world
        if u1 is None:
            u = joint_action[0]
            return [Outcome((x1, x2, u, None), 1.0, 0.0, (NO_PRIVATE, NO_PRIVATE), 2 + u)]
        if u2 is None:
            u = joint_action[1]
            return [Outcome((x1, x2, u1, u), 1.0, 0.0, (NO_PRIVATE, NO_PRIVATE), 2 + u)]
        t1, t2 = joint_action
        ok = t1 == self.trade(x1, x2) and t2 == self.trade(x2, x1)
        return [Outcome((x1, x2, u1, u2, "T"), 1.0, 1.0 if ok else 0.0, (NO_PRIVATE, NO_PRIVATE), END_OBS)]

    def batch_outcomes(self, world, joint_actions):
        x1, x2, u1, u2 = world
        a = np.asarray(joint_actions)
        m = len(a)
        if u1 is None or u2 is None:
            speaker = 0 if u1 is None else 1
            obs = 2 + a[:, speaker]
            return np.zeros(m), {int(o): (obs == o).astype(float) for o in np.unique(obs)}
        ok = (a[:, 0] == self.trade(x1, x2)) & (a[:, 1] == self.trade(x2, x1))
        return ok.astype(float), {END_OBS: np.ones(m)}


TINY_HANABI_VARIANTS = tuple("ABCDEF")
_TRADE_RE = re.compile(r"^trade_comm:(\d+)x(\d+)$")


def tiny_hanabi(variant: str) -> TinyHanabi:
    return TinyHanabi(variant)


def trade_comm(num_items: int, num_utterances: int) -> TradeComm:
    return TradeComm(num_items, num_utterances)


def make_game(name: str) -> FiniteGame:
    """Build a game from its registry name."""
    if name.startswith("tiny_hanabi:"):
        return tiny_hanabi(name.split(":", 1)[1])
    m = _TRADE_RE.match(name)
    if m:
        return trade_comm(int(m.group(1)), int(m.group(2)))
    raise GameError(f"unknown game {name!r}")


def registered_games() -> list[str]:
    return [f"tiny_hanabi:{v}" for v in TINY_HANABI_VARIANTS] + ["trade_comm:<items>x<utterances>"]


def format_payoff_table(spec: TinyHanabiSpec) -> str:
    """Render a payoff table in the suite's card/action grid layout."""
    c, a = spec.num_cards, spec.num_actions
    head = ["card", "action"] + [f"{ROMAN[j].lower()}{chr(97 + b)}" for j in range(c) for b in range(a)]
    rows = [" ".join(head)]
    for i in range(c):
        for x in range(a):
            vals = [f"{spec.payoff[i, x, j, b]:g}" for j in range(c) for b in range(a)]
            rows.append(" ".join([ROMAN[i], chr(65 + x)] + vals))
    return "\n".join(rows) + "\n"


def random_table_game(
    rng: np.random.Generator,
    horizon: int = 2,
    num_players: int = 2,
    max_actions: int = 2,
    max_outcomes: int = 2,
    num_private: int = 2,
) -> FiniteGame:
    """A small random game with stochastic transitions, for cross-checking solvers.

    Legal action counts depend only on the time step, so they are always
    consistent within information states. Public observations are ``2`` or
    ``3`` mid-game and ``END_OBS`` on the final step.
    """
    counter = iter(range(10**9))
    sizes = [tuple(int(rng.integers(1, max_actions + 1)) for _ in range(num_players)) for _ in range(horizon)]

    def private():
        return tuple(int(rng.integers(0, num_private + 1)) for _ in range(num_players))

    n_init = int(rng.integers(1, 4))
    probs = rng.dirichlet(np.ones(n_init))
    initial, frontier = [], []
    for p in probs:
        w = (0, next(counter))
        initial.append((w, float(p), tuple(int(rng.integers(1, num_private + 1)) for _ in range(num_players)), START_OBS))
        frontier.append(w)
    legal, transitions = {}, {}
    for t in range(horizon):
        nxt = []
        for w in frontier:
            legal[w] = tuple(tuple(range(k)) for k in sizes[t])
            for a in itertools.product(*legal[w]):
                k = int(rng.integers(1, max_outcomes + 1))
                ps = rng.dirichlet(np.ones(k))
                outs = []
                for p in ps:
                    nw = (t + 1, next(counter))
                    pub = END_OBS if t + 1 == horizon else int(rng.integers(2, 4))
                    priv = (NO_PRIVATE,) * num_players if t + 1 == horizon else private()
                    outs.append((nw, float(p), float(rng.integers(0, 4)), priv, pub))
                    if t + 1 < horizon:
                        nxt.append(nw)
                transitions[(w, a)] = outs
        frontier = nxt
    return TableGame(num_players, initial, legal, transitions, horizon, num_public_obs=4, name="random")


def signalling_policy(game: TradeComm) -> JointPolicy:
    """Each player utters its item, then requests the trade implied by both utterances.

    Needs ``num_utterances >= num_items``; it earns reward 1 on every deal.
    """
    n = game.spec.num_items
    if game.spec.num_utterances < n:
        raise GameError("signalling needs at least as many utterances as items")
    choices = [dict(), dict()]
    for i, s, legal in information_sets(game):
        pub = [o[1] for o in s[::2]]
        own_item = s[0][0] - 1
        if len(legal) == 1:
            choices[i][s] = legal[0]
        elif len(pub) - 1 == i:  # this player's utterance
            choices[i][s] = own_item
        else:  # trade step: public codes 2 + utterance
            other = pub[2 - i] - 2
            choices[i][s] = game.trade(own_item, other)
    return JointPolicy.deterministic(choices)
