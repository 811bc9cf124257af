"""Policies and value estimators used by CAPI.

Every model exposes the same small surface:

* ``rows(game, belief)`` – one probability array per prescription row,
  aligned with the public set's ``row_legal`` (policies only);
* ``value(game, belief)`` – scalar estimate for one belief;
* ``values(game, child, bits)`` – estimates for many beliefs that share the
  public set ``child``; ``bits`` holds one ``(M, |S_i|)`` 0/1 array per
  player;
* ``train(game, entries)`` – one update from a list of buffer entries.

Terminal beliefs are never passed to an estimator; callers treat them as 0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .fosg import FiniteGame, PublicSet
from .pubmdp import PublicBelief, belief_key, consistent_rows


@dataclass(frozen=True)
class BufferEntry:
    belief: PublicBelief
    prescription: tuple
    q: float


def apply_floor(p: np.ndarray, floor: float) -> np.ndarray:
    if floor <= 0:
        return p
    return floor + (1.0 - len(p) * floor) * p


def _pack_keys(child: PublicSet, bits: list) -> list[bytes]:
    """``belief_key`` for every row of the per-player bit matrices."""
    pub = child.public_state
    prefix = struct.pack(f">H{len(pub)}H", len(pub), *pub)
    packed = [np.packbits(np.asarray(b, dtype=np.uint8), axis=1) for b in bits]
    joined = np.concatenate(packed, axis=1) if packed else np.zeros((0, 0), np.uint8)
    return [prefix + row.tobytes() for row in joined]


def _beliefs_from_bits(child: PublicSet, bits: list) -> list[PublicBelief]:
    m = len(bits[0]) if bits else 0
    return [
        PublicBelief(child.public_state, tuple(tuple(int(x) for x in b[k]) for b in bits), child.terminal)
        for k in range(m)
    ]


# ---------------------------------------------------------------------------
# fixed value estimators
# ---------------------------------------------------------------------------


class ConstantValue:
    trainable = False

    def __init__(self, c: float = 0.0):
        self.c = float(c)

    def value(self, game, belief):
        return self.c

    def values(self, game, child, bits):
        return np.full(len(bits[0]), self.c)

    def train(self, game, entries):
        pass


class OracleValue:
    """Exact optimal belief values from a solver exposing ``value(belief)``."""

    trainable = False

    def __init__(self, solver):
        self.solver = solver

    def value(self, game, belief):
        return 0.0 if belief.terminal else self.solver.value(belief)

    def values(self, game, child, bits):
        return np.array([self.solver.value(b) for b in _beliefs_from_bits(child, bits)])

    def train(self, game, entries):
        pass


# ---------------------------------------------------------------------------
# tabular backends
# ---------------------------------------------------------------------------


class TabularValue:
    """Value table keyed by :func:`belief_key`; unseen beliefs read ``default``."""

    trainable = True

    def __init__(self, lr: float = 1.0, default: float = 0.0):
        self.lr = lr
        self.default = default
        self.table: dict[bytes, float] = {}

    def value(self, game, belief):
        if belief.terminal:
            return 0.0
        return self.table.get(belief_key(belief), self.default)

    def values(self, game, child, bits):
        get, d = self.table.get, self.default
        return np.array([get(k, d) for k in _pack_keys(child, bits)])

    def train(self, game, entries):
        for e in entries:
            k = belief_key(e.belief)
            v = self.table.get(k, self.default)
            self.table[k] = v + self.lr * (e.q - v)


class TabularPolicy:
    """One probability row per information state of each public state."""

    def __init__(self, lr: float = 1.0, floor: float = 0.0):
        self.lr = lr
        self.floor = floor
        self.table: dict[tuple, list[np.ndarray]] = {}

    def _rows(self, ps: PublicSet) -> list[np.ndarray]:
        rows = self.table.get(ps.public_state)
        if rows is None:
            rows = [np.full(len(la), 1.0 / len(la)) for la in ps.row_legal]
            self.table[ps.public_state] = rows
        return rows

    def rows(self, game, belief):
        return [r.copy() for r in self._rows(belief.public_set(game))]

    def train(self, game, entries):
        for e in entries:
            ps = e.belief.public_set(game)
            rows = self._rows(ps)
            for r in consistent_rows(ps, e.belief):
                target = np.zeros(len(rows[r]))
                target[ps.row_legal[r].index(e.prescription[r])] = 1.0
                new = rows[r] + self.lr * (target - rows[r])
                new = apply_floor(new / new.sum(), self.floor)
                rows[r] = new


# ---------------------------------------------------------------------------
# network backend
# ---------------------------------------------------------------------------


class BeliefEncoder:
    """Fixed-length 0/1 encoding of a belief.

    One one-hot block per public-state position (padded to the horizon),
    followed by each player's indicator bits padded to the largest number
    of information states that player has at any nonterminal public state.
    Policy logits use the same padded layout: player ``i``'s row ``k`` sits
    at slot ``row_base[i] + k`` and legal action ``j`` at column ``j``.
    """

    def __init__(self, game: FiniteGame):
        self.game = game
        n = game.num_players
        max_info = [0] * n
        max_actions = 1
        for ps in game.tree.walk(include_terminal=False):
            for i in range(n):
                max_info[i] = max(max_info[i], len(ps.info_states[i]))
            for la in ps.row_legal:
                max_actions = max(max_actions, len(la))
        self.max_info = tuple(max_info)
        self.max_actions = max_actions
        self.num_obs = game.num_public_obs
        self.path_dim = game.horizon * self.num_obs
        self.bit_base = tuple(int(x) for x in self.path_dim + np.concatenate([[0], np.cumsum(max_info)]))
        self.dim = self.bit_base[-1]
        self.row_base = tuple(int(x) for x in np.concatenate([[0], np.cumsum(max_info)]))
        self.num_rows = self.row_base[-1]

    def path(self, public_state: tuple) -> np.ndarray:
        x = np.zeros(self.path_dim)
        for t, o in enumerate(public_state[: self.game.horizon]):
            x[t * self.num_obs + o] = 1.0
        return x

    def encode_bits(self, public_state: tuple, bits: list) -> np.ndarray:
        m = len(bits[0])
        x = np.zeros((m, self.dim))
        x[:, : self.path_dim] = self.path(public_state)
        for i, b in enumerate(bits):
            b = np.asarray(b, dtype=float)
            x[:, self.bit_base[i] : self.bit_base[i] + b.shape[1]] = b
        return x

    def encode(self, belief: PublicBelief) -> np.ndarray:
        bits = [np.asarray(ind, dtype=float)[None, :] for ind in belief.indicators]
        return self.encode_bits(belief.public_state, bits)[0]

    def row_slots(self, ps: PublicSet) -> np.ndarray:
        return np.concatenate(
            [self.row_base[i] + np.arange(len(ps.info_states[i])) for i in range(self.game.num_players)]
        ).astype(np.intp)


class TwoHeadedNet:
    """ReLU trunk with a scalar value head and a policy-logit head, trained with Adam.

    Gradients are computed by hand; :meth:`loss_and_grads` is the single
    source of truth used both for training and for finite-difference checks.
    """

    def __init__(
        self,
        in_dim: int,
        hidden: tuple,
        policy_dim: int,
        rng: np.random.Generator,
        lr: float = 1e-4,
        squash: tuple | None = None,
    ):
        sizes = [in_dim, *hidden]
        self.params: list[np.ndarray] = []
        for a, b in zip(sizes[:-1], sizes[1:]):
            self.params += [rng.normal(0.0, np.sqrt(2.0 / a), (a, b)), np.zeros(b)]
        h = sizes[-1]
        self.params += [rng.normal(0.0, 0.1 / np.sqrt(h), (h, 1)), np.zeros(1)]
        self.params += [np.zeros((h, policy_dim)), np.zeros(policy_dim)]
        self.num_hidden = len(hidden)
        self.lr = lr
        self.squash = squash
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    # -- forward ---------------------------------------------------------
    def _trunk(self, x, params):
        acts = [x]
        for layer in range(self.num_hidden):
            w, b = params[2 * layer], params[2 * layer + 1]
            acts.append(np.maximum(acts[-1] @ w + b, 0.0))
        return acts

    def _value_out(self, z):
        if self.squash is None:
            return z, np.ones_like(z)
        lo, hi = self.squash
        s = 1.0 / (1.0 + np.exp(-z))
        return lo + (hi - lo) * s, (hi - lo) * s * (1.0 - s)

    def value(self, x: np.ndarray, params=None) -> np.ndarray:
        params = self.params if params is None else params
        h = self._trunk(np.atleast_2d(x), params)[-1]
        k = 2 * self.num_hidden
        return self._value_out((h @ params[k] + params[k + 1])[:, 0])[0]

    def logits(self, x: np.ndarray, params=None) -> np.ndarray:
        params = self.params if params is None else params
        h = self._trunk(np.atleast_2d(x), params)[-1]
        k = 2 * self.num_hidden + 2
        return h @ params[k] + params[k + 1]

    # -- loss ------------------------------------------------------------
    def loss_and_grads(self, x, q, target, mask, legal, value_weight=1.0, policy_weight=0.01, params=None):
        """Weighted value MSE plus row-wise policy cross-entropy.

        ``target`` / ``mask``: ``(B, R)`` target column and 0/1 row weights;
        ``legal``: ``(B, R, A)`` 0/1 mask of legal columns.
        """
        params = self.params if params is None else params
        B = len(x)
        acts = self._trunk(x, params)
        h = acts[-1]
        k = 2 * self.num_hidden
        z = (h @ params[k] + params[k + 1])[:, 0]
        v, dv_dz = self._value_out(z)
        diff = v - q
        value_loss = float(np.mean(diff**2))

        R, A = legal.shape[1], legal.shape[2]
        raw = (h @ params[k + 2] + params[k + 3]).reshape(B, R, A)
        masked = np.where(legal > 0, raw, -np.inf)
        mx = np.max(masked, axis=2, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.where(legal > 0, np.exp(masked - mx), 0.0)
        tot = e.sum(axis=2, keepdims=True)
        tot = np.where(tot > 0, tot, 1.0)
        prob = e / tot
        logp_t = np.take_along_axis(masked - mx - np.log(tot), target[:, :, None], axis=2)[:, :, 0]
        logp_t = np.where(mask > 0, logp_t, 0.0)
        policy_loss = float(-(mask * logp_t).sum() / B)
        loss = value_weight * value_loss + policy_weight * policy_loss

        dz = value_weight * 2.0 * diff / B * dv_dz
        onehot = np.zeros_like(prob)
        np.put_along_axis(onehot, target[:, :, None], 1.0, axis=2)
        dlog = policy_weight * (prob - onehot) * mask[:, :, None] / B
        dlog = dlog.reshape(B, R * A)

        grads = [None] * len(params)
        grads[k] = h.T @ dz[:, None]
        grads[k + 1] = np.array([dz.sum()])
        grads[k + 2] = h.T @ dlog
        grads[k + 3] = dlog.sum(axis=0)
        dh = dz[:, None] @ params[k].T + dlog @ params[k + 2].T
        for layer in range(self.num_hidden - 1, -1, -1):
            dh = dh * (acts[layer + 1] > 0)
            grads[2 * layer] = acts[layer].T @ dh
            grads[2 * layer + 1] = dh.sum(axis=0)
            dh = dh @ params[2 * layer].T
        return loss, grads

    def adam_step(self, grads, beta1=0.9, beta2=0.999, eps=1e-8):
        self.t += 1
        for j, g in enumerate(grads):
            self.m[j] = beta1 * self.m[j] + (1 - beta1) * g
            self.v[j] = beta2 * self.v[j] + (1 - beta2) * g * g
            mhat = self.m[j] / (1 - beta1**self.t)
            vhat = self.v[j] / (1 - beta2**self.t)
            self.params[j] -= self.lr * mhat / (np.sqrt(vhat) + eps)


class NetworkModel:
    """Two-headed network acting as both the factored policy and the value estimator."""

    trainable = True

    def __init__(
        self,
        game: FiniteGame,
        rng: np.random.Generator,
        hidden: tuple = (256, 256, 256),
        lr: float = 1e-4,
        value_weight: float = 1.0,
        policy_weight: float = 0.01,
        squash: tuple | None = None,
        floor: float = 0.0,
    ):
        self.encoder = BeliefEncoder(game)
        enc = self.encoder
        self.net = TwoHeadedNet(enc.dim, tuple(hidden), enc.num_rows * enc.max_actions, rng, lr, squash)
        self.value_weight = value_weight
        self.policy_weight = policy_weight
        self.floor = floor
        self.last_loss = float("nan")

    def rows(self, game, belief):
        ps = belief.public_set(game)
        logits = self.net.logits(self.encoder.encode(belief))[0].reshape(self.encoder.num_rows, self.encoder.max_actions)
        out = []
        for slot, la in zip(self.encoder.row_slots(ps), ps.row_legal):
            z = logits[slot, : len(la)]
            p = np.exp(z - z.max())
            out.append(apply_floor(p / p.sum(), self.floor))
        return out

    def value(self, game, belief):
        if belief.terminal:
            return 0.0
        return float(self.net.value(self.encoder.encode(belief))[0])

    def values(self, game, child, bits):
        return self.net.value(self.encoder.encode_bits(child.public_state, bits))

    def batch(self, game, entries):
        enc = self.encoder
        B, R, A = len(entries), enc.num_rows, enc.max_actions
        x = np.stack([enc.encode(e.belief) for e in entries])
        q = np.array([e.q for e in entries])
        target = np.zeros((B, R), dtype=np.intp)
        mask = np.zeros((B, R))
        legal = np.zeros((B, R, A))
        for b, e in enumerate(entries):
            ps = e.belief.public_set(game)
            slots = enc.row_slots(ps)
            for r, la in enumerate(ps.row_legal):
                legal[b, slots[r], : len(la)] = 1.0
            for r in consistent_rows(ps, e.belief):
                target[b, slots[r]] = ps.row_legal[r].index(e.prescription[r])
                mask[b, slots[r]] = 1.0
        return x, q, target, mask, legal

    def train(self, game, entries):
        x, q, target, mask, legal = self.batch(game, entries)
        with np.errstate(invalid="ignore", over="ignore"):
            loss, grads = self.net.loss_and_grads(x, q, target, mask, legal, self.value_weight, self.policy_weight)
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite training loss")
        self.net.adam_step(grads)
        self.last_loss = loss
        return loss
