"""Coordinator view of a game: prescriptions, public beliefs and their dynamics.

A public belief is stored as its public state plus, per player, a 0/1
indicator over that public state's information states (the restriction of
the player's reach contribution under the coordinator's deterministic
prescriptions). The posterior over the public set is recomputed from the
game's chance reach whenever it is needed.

Prescription vectors are flat tuples of actions, one entry per row, rows
ordered by ``(player, information-state index)`` as laid out by
:class:`~pubcoord.fosg.PublicSet`.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .fosg import FiniteGame, GameError, PublicSet

Prescription = tuple

DEFAULT_CAP = 10**6


class BeliefError(GameError):
    pass


class PrescriptionError(GameError):
    pass


class CapExceeded(GameError):
    pass


@dataclass(frozen=True)
class PublicBelief:
    public_state: tuple
    indicators: tuple  # per player, tuple of 0/1 over S_i(s)
    terminal: bool = False

    def public_set(self, game: FiniteGame) -> PublicSet:
        return game.tree.get(self.public_state)

    @property
    def depth(self) -> int:
        return len(self.public_state) - 1


def belief_key(belief: PublicBelief) -> bytes:
    """Canonical bytes: u16 count and u16 codes of the public state, then bit-packed indicators."""
    pub = belief.public_state
    out = [struct.pack(f">H{len(pub)}H", len(pub), *pub)]
    for ind in belief.indicators:
        out.append(np.packbits(np.asarray(ind, dtype=np.uint8)).tobytes())
    return b"".join(out)


def initial_belief(game: FiniteGame) -> PublicBelief:
    root = game.tree.root
    return PublicBelief(root.public_state, tuple((1,) * len(s) for s in root.info_states))


def live_mask(ps: PublicSet, belief: PublicBelief) -> np.ndarray:
    """Histories whose every player's indicator is 1."""
    mask = ps.chance > 0
    for i, ind in enumerate(belief.indicators):
        mask &= np.asarray(ind, dtype=bool)[ps.info_index[:, i]]
    return mask


def reconstruct_history_distribution(game: FiniteGame, belief: PublicBelief) -> tuple[tuple, np.ndarray]:
    """Posterior over the public set: chance reach times indicator products, normalised."""
    ps = belief.public_set(game)
    weights = ps.chance * live_mask(ps, belief)
    total = weights.sum()
    if total <= 0:
        raise BeliefError(f"belief at {belief.public_state} has empty support")
    return ps.histories, weights / total


def prescription_layout(game: FiniteGame, belief: PublicBelief) -> tuple:
    """Legal actions per prescription row at ``belief``."""
    return belief.public_set(game).row_legal


def check_prescription(ps: PublicSet, gamma: Sequence[int]) -> None:
    if len(gamma) != ps.num_rows:
        raise PrescriptionError(
            f"prescription has {len(gamma)} rows, public state {ps.public_state} needs {ps.num_rows}"
        )
    for a, legal in zip(gamma, ps.row_legal):
        if a not in legal:
            raise PrescriptionError(f"action {a} is not legal in its row {legal}")


def prescription_count(game: FiniteGame, belief: PublicBelief) -> int:
    n = 1
    for legal in prescription_layout(game, belief):
        n *= len(legal)
    return n


def enumerate_prescription_vectors(
    game: FiniteGame, belief: PublicBelief, cap: int = DEFAULT_CAP
) -> list[Prescription]:
    """All prescription vectors at ``belief`` in lexicographic order."""
    count = prescription_count(game, belief)
    if count > cap:
        raise CapExceeded(f"{count} prescription vectors exceed cap {cap}")
    return list(itertools.product(*prescription_layout(game, belief)))


def joint_action(ps: PublicSet, gamma: Sequence[int], hist: int) -> tuple:
    return tuple(gamma[r] for r in ps.row_of_history[hist])


@dataclass
class StepResult:
    """Expected reward and per-observation branches for one ``(belief, prescription)``."""

    reward: float
    obs_probs: dict  # obs -> probability
    next_beliefs: dict  # obs -> PublicBelief, or None for an unbuilt terminal branch


def _branch(game, ps, belief, gamma, posterior, live):
    reward = 0.0
    obs_probs: dict[int, float] = {}
    for k in np.flatnonzero(live):
        h = ps.histories[k]
        a = joint_action(ps, gamma, k)
        for o in game.transition(h.world, a):
            if o.prob <= 0:
                continue
            w = posterior[k] * o.prob
            reward += w * o.reward
            obs_probs[o.public] = obs_probs.get(o.public, 0.0) + w
    return reward, dict(sorted(obs_probs.items()))


def _require_nonterminal(belief: PublicBelief) -> None:
    if belief.terminal:
        raise BeliefError("terminal belief has no prescriptions")


def expected_reward(game: FiniteGame, belief: PublicBelief, gamma: Sequence[int]) -> float:
    _require_nonterminal(belief)
    ps = belief.public_set(game)
    check_prescription(ps, gamma)
    _, posterior = reconstruct_history_distribution(game, belief)
    return _branch(game, ps, belief, gamma, posterior, posterior > 0)[0]


def observation_distribution(game: FiniteGame, belief: PublicBelief, gamma: Sequence[int]) -> dict[int, float]:
    _require_nonterminal(belief)
    ps = belief.public_set(game)
    check_prescription(ps, gamma)
    _, posterior = reconstruct_history_distribution(game, belief)
    return _branch(game, ps, belief, gamma, posterior, posterior > 0)[1]


def _next_indicators(child: PublicSet, belief: PublicBelief, gamma: Sequence[int], parent: PublicSet) -> tuple:
    out = []
    for i, ind in enumerate(belief.indicators):
        ind = np.asarray(ind, dtype=np.int8)
        rows = np.asarray(gamma[parent.offsets[i] : parent.offsets[i + 1]], dtype=np.int64)
        pidx = child.parent_index[i]
        new = ind[pidx] * (rows[pidx] == child.own_action[i])
        out.append(tuple(int(x) for x in new))
    return tuple(out)


def next_belief(game: FiniteGame, belief: PublicBelief, gamma: Sequence[int], obs: int) -> PublicBelief:
    """Belief after executing ``gamma`` and observing public observation ``obs``."""
    probs = observation_distribution(game, belief, gamma)
    if probs.get(obs, 0.0) <= 0:
        raise BeliefError(f"observation {obs} has zero probability")
    ps = belief.public_set(game)
    child = ps.child(obs)
    return PublicBelief(child.public_state, _next_indicators(child, belief, gamma, ps), child.terminal)


def step(game: FiniteGame, belief: PublicBelief, gamma: Sequence[int], build_terminal: bool = True) -> StepResult:
    """Reward, observation distribution and next beliefs in one pass.

    With ``build_terminal=False`` branches into terminal public states are
    reported as ``None`` instead of constructing the (possibly huge)
    terminal public set.
    """
    _require_nonterminal(belief)
    ps = belief.public_set(game)
    _, posterior = reconstruct_history_distribution(game, belief)
    return _step(game, ps, belief, gamma, posterior, build_terminal)


def _step(game, ps, belief, gamma, posterior, build_terminal) -> StepResult:
    check_prescription(ps, gamma)
    reward, probs = _branch(game, ps, belief, gamma, posterior, posterior > 0)
    nxt = {}
    for obs in probs:
        if obs == game.terminal_obs and not build_terminal:
            nxt[obs] = None
            continue
        child = ps.child(obs)
        nxt[obs] = PublicBelief(child.public_state, _next_indicators(child, belief, gamma, ps), child.terminal)
    return StepResult(reward, probs, nxt)


def consistent_rows(ps: PublicSet, belief: PublicBelief) -> np.ndarray:
    """Row indices whose information state has indicator 1.

    Rows outside this set change neither the reward, the observation
    distribution nor the next belief.
    """
    flags = np.concatenate([np.asarray(ind, dtype=bool) for ind in belief.indicators]) if ps.num_rows else np.zeros(0, bool)
    return np.flatnonzero(flags)


class StepCache:
    """Evaluates many prescriptions at one belief, sharing work between
    prescriptions that agree on every consistent row."""

    def __init__(self, game: FiniteGame, belief: PublicBelief, build_terminal: bool = True):
        _require_nonterminal(belief)
        self.game = game
        self.belief = belief
        self.ps = belief.public_set(game)
        _, self.posterior = reconstruct_history_distribution(game, belief)
        self.rows = consistent_rows(self.ps, belief)
        self.build_terminal = build_terminal
        self._memo: dict[tuple, StepResult] = {}

    def __call__(self, gamma: Sequence[int]) -> StepResult:
        key = tuple(gamma[r] for r in self.rows)
        res = self._memo.get(key)
        if res is None:
            res = _step(self.game, self.ps, self.belief, gamma, self.posterior, self.build_terminal)
            self._memo[key] = res
        return res


def reachable_beliefs(game: FiniteGame, cap: int = DEFAULT_CAP) -> Iterator[PublicBelief]:
    """Every belief reachable under some sequence of prescriptions, including terminal ones."""
    seen = set()
    stack = [initial_belief(game)]
    while stack:
        b = stack.pop()
        k = belief_key(b)
        if k in seen:
            continue
        seen.add(k)
        yield b
        if b.terminal:
            continue
        cache = StepCache(game, b)
        for gamma in enumerate_prescription_vectors(game, b, cap):
            for nb in cache(gamma).next_beliefs.values():
                stack.append(nb)
