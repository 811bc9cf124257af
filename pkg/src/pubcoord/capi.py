"""Cooperative approximate policy iteration in the public belief MDP.

At every belief the coordinator acquires up to ``K`` prescription vectors
from a factored policy, assesses each one by one-step lookahead (expected
reward plus the expected estimated value of the next belief), records the
best one as a training target, and executes it (or a random assessed
vector when exploring). Episodes expand every positive-probability public
branch, and the models are trained once per episode.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fosg import FiniteGame, GameError, JointPolicy, evaluate_joint_policy
from .models import (
    BufferEntry,
    ConstantValue,
    NetworkModel,
    OracleValue,
    TabularPolicy,
    TabularValue,
)
from .pubmdp import (
    DEFAULT_CAP,
    CapExceeded,
    PublicBelief,
    check_prescription,
    initial_belief,
    live_mask,
    reconstruct_history_distribution,
    step,
)

ACQUISITION_MODES = ("sample", "k_most_likely", "enumerate_all")
EXPLORATION_MODES = ("epsilon", "once_per_episode", "none")
BACKENDS = ("tabular", "network")
CHECKPOINT_VERSION = 1


@dataclass
class CapiConfig:
    num_vectors: int = 1000
    acquisition: str = "sample"
    exploration: str = "epsilon"
    epsilon: float = 0.1
    structured_exploration: bool = False
    backend: str = "tabular"
    policy_lr: float = 1.0
    value_lr: float = 1.0
    policy_floor: float = 0.0
    learning_rate: float = 1e-4
    hidden: tuple = (256, 256, 256)
    value_weight: float = 1.0
    policy_weight: float = 0.01
    squash: bool = False
    value_range: tuple = (0.0, 1.0)
    enumerate_cap: int = DEFAULT_CAP
    max_nodes: int = 1_000_000

    def validate(self, game: FiniteGame | None = None) -> None:
        if self.num_vectors < 1:
            raise GameError("num_vectors must be at least 1")
        if self.acquisition not in ACQUISITION_MODES:
            raise GameError(f"acquisition must be one of {ACQUISITION_MODES}")
        if self.exploration not in EXPLORATION_MODES:
            raise GameError(f"exploration must be one of {EXPLORATION_MODES}")
        if self.backend not in BACKENDS:
            raise GameError(f"backend must be one of {BACKENDS}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise GameError("epsilon must lie in [0, 1]")
        if self.policy_floor < 0:
            raise GameError("policy_floor must be non-negative")
        if game is not None and self.policy_floor > 0:
            widest = max(len(la) for ps in game.tree.walk(include_terminal=False) for la in ps.row_legal)
            if self.policy_floor >= 1.0 / widest:
                raise GameError(f"policy_floor must be below 1/{widest}")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# acquisition
# ---------------------------------------------------------------------------


_HASH_MULT = np.random.default_rng(0x5EED).integers(1, 2**62, size=4096, dtype=np.int64) | 1


def unique_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of first occurrences (in order) and the inverse map of distinct rows.

    Rows are hashed to one integer and grouped with a 1-D unique; every row
    is then compared with its group's representative, so a hash collision
    only costs a fallback to the exact row-wise unique.
    """
    mat = np.asarray(mat)
    m, width = mat.shape
    if m == 0:
        return np.zeros(0, dtype=np.intp), np.zeros(0, dtype=np.intp)
    if width > len(_HASH_MULT):
        _, first, inverse = np.unique(mat, axis=0, return_index=True, return_inverse=True)
    else:
        with np.errstate(over="ignore"):
            h = (mat.astype(np.int64) * _HASH_MULT[:width]).sum(axis=1) if width else np.zeros(m, np.int64)
        _, first, inverse = np.unique(h, return_index=True, return_inverse=True)
        if not np.array_equal(mat[first[inverse]], mat):
            _, first, inverse = np.unique(mat, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    # renumber groups by first occurrence
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return first[order], rank[inverse]


def _dedupe(mat: np.ndarray) -> np.ndarray:
    """Distinct rows in order of first occurrence."""
    first, _ = unique_rows(mat)
    return mat[first]


def prescription_vectors(
    rows: list,
    legal: tuple,
    k: int,
    mode: str,
    rng: np.random.Generator | None = None,
    cap: int = DEFAULT_CAP,
) -> np.ndarray:
    """Acquire distinct prescription vectors as a ``(M, num_rows)`` action array.

    ``sample`` draws ``k`` vectors from the product distribution and keeps
    the distinct ones in draw order; ``k_most_likely`` returns the ``k``
    most probable vectors in descending probability; ``enumerate_all``
    lists every vector in lexicographic order.
    """
    if k < 1:
        raise GameError("K must be at least 1")
    n_rows = len(legal)
    if mode == "enumerate_all":
        total = math.prod(len(la) for la in legal)
        if total > cap:
            raise CapExceeded(f"{total} prescription vectors exceed cap {cap}")
        return np.array(list(itertools.product(*legal)), dtype=np.int64).reshape(total, n_rows)
    if mode == "sample":
        if rng is None:
            raise GameError("sample acquisition needs an rng")
        return _dedupe(sample_vectors(rows, legal, k, rng))
    if mode == "k_most_likely":
        return k_most_likely(rows, legal, k)
    raise GameError(f"unknown acquisition mode {mode!r}")


def sample_vectors(rows: list, legal: tuple, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` independent draws from the product distribution, duplicates kept."""
    cols = []
    for p, la in zip(rows, legal):
        p = np.asarray(p, dtype=float)
        idx = rng.choice(len(la), size=k, p=p / p.sum())
        cols.append(np.asarray(la, dtype=np.int64)[idx])
    return np.stack(cols, axis=1) if cols else np.zeros((k, 0), dtype=np.int64)


def k_most_likely(rows: list, legal: tuple, k: int) -> np.ndarray:
    """The ``k`` most probable vectors, most probable first.

    Rows are merged one at a time, keeping the best ``k`` partial vectors;
    a best-``k`` vector always has a best-``k`` prefix, so the result is
    exact. Equal probabilities are ordered by the vector's positions in the
    per-row descending-sorted action lists, lexicographically.
    """
    n_rows = len(rows)
    score = np.zeros(1)
    pos = np.zeros((1, 0), dtype=np.intp)
    orders = []
    for p in rows:
        p = np.asarray(p, dtype=float)
        o = np.argsort(-p, kind="stable")
        orders.append(o)
        with np.errstate(divide="ignore"):
            lg = np.log(p[o])
        a = len(o)
        # lexicographic rank of the current prefixes
        lex = np.empty(len(pos), dtype=np.intp)
        lex[np.lexsort(pos.T[::-1]) if pos.shape[1] else np.arange(len(pos))] = np.arange(len(pos))
        cand = (score[:, None] + lg[None, :]).reshape(-1)
        if len(cand) > k:
            kth = np.partition(-cand, k - 1)[k - 1]
            keep = np.flatnonzero(-cand <= kth)
        else:
            keep = np.arange(len(cand))
        parent, col = keep // a, keep % a
        order = np.lexsort((col, lex[parent], -cand[keep]))[:k]
        parent, col = parent[order], col[order]
        score = cand[keep][order]
        pos = np.concatenate([pos[parent], col[:, None]], axis=1)
    if n_rows == 0:
        return np.zeros((1, 0), dtype=np.int64)
    out = np.empty(pos.shape, dtype=np.int64)
    for r in range(n_rows):
        out[:, r] = np.asarray(legal[r], dtype=np.int64)[orders[r][pos[:, r]]]
    return out


def vector_probability(rows: list, legal: tuple, gamma) -> float:
    """Product probability of one vector under factored rows."""
    p = 1.0
    for row, la, a in zip(rows, legal, gamma):
        p *= float(row[la.index(int(a))])
    return p


# ---------------------------------------------------------------------------
# assessment
# ---------------------------------------------------------------------------


@dataclass
class Assessment:
    q: np.ndarray
    reward: np.ndarray
    obs_probs: dict  # obs -> (M,) probabilities


def assess_batch(game: FiniteGame, belief: PublicBelief, vectors: np.ndarray, value) -> Assessment:
    """Exact one-step lookahead value of every vector (rows of ``vectors``)."""
    ps = belief.public_set(game)
    vectors = np.asarray(vectors, dtype=np.int64)
    m = len(vectors)
    _, post = reconstruct_history_distribution(game, belief)
    reward = np.zeros(m)
    obs: dict[int, np.ndarray] = {}
    rows_of = ps.row_of_history
    for k in np.flatnonzero(live_mask(ps, belief)):
        r, probs = game.batch_outcomes(ps.histories[k].world, vectors[:, rows_of[k]])
        reward += post[k] * r
        for o, p in probs.items():
            if o in obs:
                obs[o] += post[k] * p
            else:
                obs[o] = post[k] * p
    obs = dict(sorted(obs.items()))
    q = reward.copy()
    for o, p in obs.items():
        if o == game.terminal_obs:
            continue
        sel = np.flatnonzero(p > 0)
        if len(sel) == 0:
            continue
        child = ps.child(o)
        bits = []
        for i, ind in enumerate(belief.indicators):
            ind = np.asarray(ind, dtype=np.uint8)
            pidx = child.parent_index[i]
            own = vectors[np.ix_(sel, ps.offsets[i] + pidx)]
            bits.append((ind[pidx][None, :] * (own == child.own_action[i][None, :])).astype(np.uint8))
        flat = np.concatenate(bits, axis=1)
        first, inverse = unique_rows(flat)
        uniq = flat[first]
        sizes = np.cumsum([0] + [b.shape[1] for b in bits])
        ubits = [uniq[:, sizes[i] : sizes[i + 1]] for i in range(len(bits))]
        v = np.asarray(value.values(game, child, ubits), dtype=float)[inverse]
        q[sel] += p[sel] * v
    return Assessment(q, reward, obs)


def assess(game: FiniteGame, belief: PublicBelief, gamma, value) -> tuple[float, object]:
    """Lookahead value of one vector through :func:`pubmdp.step` (reference path)."""
    res = step(game, belief, tuple(int(a) for a in gamma), build_terminal=False)
    q = res.reward
    for o, p in res.obs_probs.items():
        nb = res.next_beliefs[o]
        if nb is not None and not nb.terminal:
            q += p * value.value(game, nb)
    return q, res


# ---------------------------------------------------------------------------
# state, act, episodes, training
# ---------------------------------------------------------------------------


@dataclass
class CapiState:
    game: FiniteGame
    config: CapiConfig
    policy: object
    value: object
    episodes: int = 0

    def train(self, entries: list) -> None:
        if not entries:
            raise GameError("training needs a nonempty buffer")
        if self.policy is self.value:
            self.policy.train(self.game, entries)
            return
        self.policy.train(self.game, entries)
        if getattr(self.value, "trainable", False):
            self.value.train(self.game, entries)


def make_state(
    game: FiniteGame, config: CapiConfig, rng: np.random.Generator, value=None
) -> CapiState:
    """Fresh models for ``config``; ``value`` overrides the value estimator."""
    config.validate(game)
    if config.backend == "network":
        squash = tuple(config.value_range) if config.squash else None
        model = NetworkModel(
            game, rng, config.hidden, config.learning_rate, config.value_weight,
            config.policy_weight, squash, config.policy_floor,
        )
        return CapiState(game, config, model, model if value is None else value)
    policy = TabularPolicy(config.policy_lr, config.policy_floor)
    return CapiState(game, config, policy, TabularValue(config.value_lr) if value is None else value)


@dataclass
class ActResult:
    executed: tuple
    entry: BufferEntry
    vectors: np.ndarray
    assessment: Assessment


def act(
    state: CapiState,
    belief: PublicBelief,
    rng: np.random.Generator | None,
    explore: bool = False,
    training: bool = True,
) -> ActResult:
    """Acquire, assess, pick the first maximiser; explore by executing a random assessed vector."""
    game, cfg = state.game, state.config
    if belief.terminal:
        raise GameError("cannot act at a terminal belief")
    ps = belief.public_set(game)
    rows = state.policy.rows(game, belief)
    mode = cfg.acquisition
    if training and cfg.structured_exploration:
        wide = [r for r, la in enumerate(ps.row_legal) if len(la) > 1]
        if wide:
            r = wide[int(rng.integers(len(wide)))]
            rows[r] = np.full(len(rows[r]), 1.0 / len(rows[r]))
    if not training and mode == "sample":
        mode = "k_most_likely"
    vectors = prescription_vectors(rows, ps.row_legal, cfg.num_vectors, mode, rng, cfg.enumerate_cap)
    a = assess_batch(game, belief, vectors, state.value)
    best = int(np.argmax(a.q))
    target = tuple(int(x) for x in vectors[best])
    entry = BufferEntry(belief, target, float(a.q[best]))
    executed = target
    if explore:
        executed = tuple(int(x) for x in vectors[int(rng.integers(len(vectors)))])
    return ActResult(executed, entry, vectors, a)


def _episode(state: CapiState, rng, explore_at: int | None, epsilon: float, training: bool) -> list:
    game, cfg = state.game, state.config
    buffer: list[BufferEntry] = []
    stack = [initial_belief(game)]
    while stack:
        b = stack.pop()
        if len(buffer) >= cfg.max_nodes:
            raise CapExceeded(f"episode exceeded {cfg.max_nodes} decision points")
        node = len(buffer)
        if explore_at is not None:
            explore = node == explore_at
        else:
            explore = training and epsilon > 0 and rng.random() < epsilon
        res = act(state, b, rng, explore=explore, training=training)
        buffer.append(res.entry)
        nxt = step(game, b, res.executed, build_terminal=False)
        for o in sorted(nxt.obs_probs, reverse=True):
            nb = nxt.next_beliefs[o]
            if nb is not None and not nb.terminal:
                stack.append(nb)
    return buffer


def run_episode(state: CapiState, rng: np.random.Generator, training: bool = True) -> list:
    """Play one episode over every positive-probability public branch; returns the buffer."""
    cfg = state.config
    if training and cfg.exploration == "once_per_episode":
        # the dry run sees the same random stream as the real episode, so the
        # decision points before the chosen one coincide in both passes
        pick = rng.random()
        count = len(_episode(state, copy.deepcopy(rng), None, 0.0, True))
        return _episode(state, rng, int(pick * count), 0.0, True)
    eps = cfg.epsilon if cfg.exploration == "epsilon" else 0.0
    return _episode(state, rng, None, eps, training)


def train_step(state: CapiState, buffer: list) -> None:
    """Update policy and value from ``buffer`` and empty it."""
    state.train(buffer)
    buffer.clear()
    state.episodes += 1


def greedy_prescription(state: CapiState, belief: PublicBelief) -> tuple:
    return act(state, belief, None, explore=False, training=False).entry.prescription


def greedy_joint_policy(state: CapiState) -> JointPolicy:
    from .exact import decentralize

    return decentralize(state.game, lambda b: greedy_prescription(state, b))


def greedy_value(state: CapiState) -> float:
    return evaluate_joint_policy(state.game, greedy_joint_policy(state))


@dataclass
class CapiRun:
    curve: list = field(default_factory=list)  # (episode, greedy value, best value, buffer size, wall ms)
    best_value: float = -math.inf
    state: CapiState | None = None


def train_capi(
    game: FiniteGame,
    config: CapiConfig,
    rng: np.random.Generator,
    episodes: int,
    eval_every: int = 1,
    value=None,
    target: float | None = None,
    log_path: str | Path | None = None,
    record_time: bool = True,
    on_eval: Callable | None = None,
    init_rng: np.random.Generator | None = None,
    deadline: float | None = None,
) -> CapiRun:
    """Run CAPI for ``episodes`` episodes, scoring the greedy joint policy every ``eval_every``.

    Training stops early once the best greedy value reaches ``target``
    (within 1e-9), when a target is given, or at the first evaluation past
    ``deadline`` (a ``time.perf_counter`` value). Model parameters are
    initialised from ``init_rng`` when given, else from ``rng``.
    """
    state = make_state(game, config, rng if init_rng is None else init_rng, value)
    run = CapiRun(state=state)
    t0 = time.perf_counter()
    buffer_size = 0

    def evaluate(ep: int) -> bool:
        v = greedy_value(state)
        run.best_value = max(run.best_value, v)
        ms = (time.perf_counter() - t0) * 1000.0 if record_time else 0.0
        run.curve.append((ep, v, run.best_value, buffer_size, ms))
        if on_eval is not None:
            on_eval(ep, v, run.best_value, ms)
        if deadline is not None and time.perf_counter() >= deadline:
            return True
        return target is not None and run.best_value >= target - 1e-9

    done = evaluate(0)
    for ep in range(1, episodes + 1):
        if done:
            break
        buffer = run_episode(state, rng)
        buffer_size = len(buffer)
        train_step(state, buffer)
        if ep % eval_every == 0 or ep == episodes:
            done = evaluate(ep)
    if log_path is not None:
        write_training_log(run, log_path)
    return run


def write_training_log(run: CapiRun, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["episode", "greedy_return", "buffer_size", "wall_ms"])
        for ep, v, _, size, ms in run.curve:
            w.writerow([ep, f"{v:.9f}", size, f"{ms:.1f}"])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(state: CapiState, path: str | Path) -> None:
    """``.npz`` with model arrays plus a JSON header (version, config, config digest)."""
    cfg = state.config
    header = {
        "version": CHECKPOINT_VERSION,
        "game": state.game.name,
        "config": asdict(cfg),
        "config_digest": cfg.digest(),
        "episodes": state.episodes,
    }
    arrays: dict[str, np.ndarray] = {}
    if isinstance(state.policy, NetworkModel):
        header["backend"] = "network"
        for j, p in enumerate(state.policy.net.params):
            arrays[f"param_{j}"] = p
    else:
        header["backend"] = "tabular"
        pol = state.policy
        header["policy_keys"] = [list(k) for k in pol.table]
        for j, rows in enumerate(pol.table.values()):
            arrays[f"policy_{j}"] = np.concatenate(rows) if rows else np.zeros(0)
    if isinstance(state.value, TabularValue):
        keys = list(state.value.table)
        header["value_keys"] = [k.hex() for k in keys]
        arrays["values"] = np.array([state.value.table[k] for k in keys])
    arrays["header"] = np.array(json.dumps(header, default=list))
    np.savez(path, **arrays)


def load_checkpoint(game: FiniteGame, path: str | Path) -> CapiState:
    data = np.load(path, allow_pickle=False)
    header = json.loads(str(data["header"]))
    if header["version"] != CHECKPOINT_VERSION:
        raise GameError(f"unsupported checkpoint version {header['version']}")
    raw = header["config"]
    raw["hidden"] = tuple(raw["hidden"])
    raw["value_range"] = tuple(raw["value_range"])
    cfg = CapiConfig(**raw)
    if cfg.digest() != header["config_digest"]:
        raise GameError("checkpoint config does not match its digest")
    if header["game"] != game.name:
        raise GameError(f"checkpoint is for {header['game']}, not {game.name}")
    state = make_state(game, cfg, np.random.default_rng(0))
    state.episodes = header["episodes"]
    if header["backend"] == "network":
        net = state.policy.net
        net.params = [np.array(data[f"param_{j}"]) for j in range(len(net.params))]
    else:
        for j, key in enumerate(header["policy_keys"]):
            flat = data[f"policy_{j}"]
            ps = game.tree.get(tuple(key))
            cuts = np.cumsum([len(la) for la in ps.row_legal])[:-1]
            state.policy.table[tuple(key)] = list(np.split(flat, cuts))
    if "value_keys" in header:
        state.value.table = {bytes.fromhex(k): float(v) for k, v in zip(header["value_keys"], data["values"])}
    return state


__all__ = [
    "ActResult",
    "Assessment",
    "CapiConfig",
    "CapiRun",
    "CapiState",
    "ConstantValue",
    "OracleValue",
    "act",
    "assess",
    "assess_batch",
    "check_prescription",
    "greedy_joint_policy",
    "greedy_prescription",
    "greedy_value",
    "k_most_likely",
    "load_checkpoint",
    "make_state",
    "prescription_vectors",
    "run_episode",
    "save_checkpoint",
    "train_capi",
    "train_step",
    "unique_rows",
    "sample_vectors",
    "vector_probability",
]
