"""Experiment orchestration: configs, seeding, multi-seed runs, summaries and plot data.

Config files are INI-style: an ``[experiment]`` section plus one section
per algorithm. Comma-separated values in an algorithm section expand into
a grid (Cartesian product), and a comma-separated ``game`` list runs every
algorithm block on every game::

    [experiment]
    game = tiny_hanabi:A, tiny_hanabi:B
    seeds = 32            ; or an explicit list: 3, 5, 8
    episodes = 200000
    eval_every = 500
    out = results/fig3
    workers = 1
    record_time = true
    stop_when_solved = true

    [pubmdp_q]
    epsilon = 0.2, 0.5, 0.8
    alpha = 0.05, 0.1, 0.2

    [capi]
    num_vectors = 1000
    policy_floor = 0.05

Every (game, algorithm setting, seed) writes
``<out>/<game>/<label>/seed_<seed>.csv`` with header
``seed,episode,greedy_value,best_value,wall_ms``; ``<out>/summary.json``
holds per-group statistics.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import itertools
import json
import re
import statistics
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import ALGORITHMS as BASELINES
from .baselines import BaselineConfig, train_baseline
from .capi import CapiConfig, train_capi
from .exact import build_belief_graph, pubmdp_q_learning
from .fosg import GameError
from .oracle import oracle_value
from .zoo import make_game

ALGORITHMS = ("pubmdp_q", "capi") + BASELINES
CSV_HEADER = ["seed", "episode", "greedy_value", "best_value", "wall_ms"]
SUMMARY_VERSION = 1
SOLVE_TOL = 1e-9
STATISTICS = ("min", "median", "max", "mean", "solve_rate")


class ConfigError(GameError):
    """Invalid experiment configuration (CLI exit code 2)."""


def stream(seed: int, name: str) -> np.random.Generator:
    """Named child stream of a run's root seed; unrelated names never share state."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


@dataclass
class AlgorithmSpec:
    name: str
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={_fmt_value(v)}" for k, v in sorted(self.params.items()))
        return f"{self.name}[{inner}]"


@dataclass
class ExperimentConfig:
    games: list
    algorithms: list  # AlgorithmSpec, grid already expanded
    seeds: list
    episodes: int
    eval_every: int = 100
    out: str = "results"
    workers: int = 1
    record_time: bool = True
    stop_when_solved: bool = False
    max_wall_seconds: float | None = None
    oracle: float | None = None

    def validate(self) -> None:
        if not self.games:
            raise ConfigError("no game given")
        for g in self.games:
            try:
                make_game(g)
            except GameError as e:
                raise ConfigError(str(e)) from None
        if not self.algorithms:
            raise ConfigError("no algorithm section given")
        for a in self.algorithms:
            if a.name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a.name!r}; choose from {ALGORITHMS}")
            _algorithm_config(a, self.episodes)
        if len(set(self.seeds)) != len(self.seeds) or not self.seeds:
            raise ConfigError("seeds must be a nonempty list of distinct integers")
        if self.episodes < 0:
            raise ConfigError("episodes must be non-negative")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def deterministic(self) -> bool:
        return self.max_wall_seconds is None


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _fmt_value(v) -> str:
    if isinstance(v, tuple):
        return "x".join(_fmt_value(x) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_seeds(text: str) -> list[int]:
    items = _split(text)
    try:
        if len(items) == 1 and ".." not in items[0]:
            return list(range(int(items[0])))
        out = []
        for it in items:
            if ".." in it:
                lo, hi = it.split("..")
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(it))
        return out
    except ValueError:
        raise ConfigError(f"bad seeds value {text!r}") from None


def _coerce(name: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            return parse_bool(text)
        if isinstance(default, int) and not isinstance(default, bool):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(type(default[0])(x) for x in re.split(r"[x: ]+", text) if x)
        if default is None:
            if text.lower() == "none":
                return None
            return int(text) if name in _INT_OPTIONAL else float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {text!r} for {name}") from None


_PUBMDP_Q_FIELDS = {"epsilon": 0.5, "alpha": 0.1}
_INT_OPTIONAL = {"decay_episodes"}


def _field_defaults(algo: str) -> dict:
    if algo == "pubmdp_q":
        return dict(_PUBMDP_Q_FIELDS)
    if algo == "capi":
        return {f.name: f.default for f in dataclasses.fields(CapiConfig)}
    return {f.name: f.default for f in dataclasses.fields(BaselineConfig) if f.name not in ("algorithm", "episodes", "eval_every")}


def expand_grid(algo: str, raw: dict[str, str]) -> list[AlgorithmSpec]:
    """One spec per point of the Cartesian product of comma-separated values."""
    defaults = _field_defaults(algo)
    keys, choices = [], []
    for k, v in raw.items():
        if k not in defaults:
            raise ConfigError(f"unknown key {k!r} for {algo}")
        keys.append(k)
        choices.append([_coerce(k, x, defaults[k]) for x in _split(v)] or [defaults[k]])
    return [AlgorithmSpec(algo, dict(zip(keys, combo))) for combo in itertools.product(*choices)]


def load_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config: {e}") from None
    if "experiment" not in cp:
        raise ConfigError("missing [experiment] section")
    ex = cp["experiment"]
    allowed = {"game", "seeds", "episodes", "eval_every", "out", "workers", "record_time", "stop_when_solved", "max_wall_seconds", "oracle"}
    extra = set(ex) - allowed
    if extra:
        raise ConfigError(f"unknown [experiment] keys: {sorted(extra)}")
    if "game" not in ex or "episodes" not in ex:
        raise ConfigError("[experiment] needs game and episodes")
    algos: list[AlgorithmSpec] = []
    for section in cp.sections():
        if section == "experiment":
            continue
        if section not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm section [{section}]")
        algos.extend(expand_grid(section, dict(cp[section])))
    try:
        cfg = ExperimentConfig(
            games=_split(ex["game"]),
            algorithms=algos,
            seeds=parse_seeds(ex.get("seeds", "1")),
            episodes=int(ex["episodes"]),
            eval_every=int(ex.get("eval_every", "100")),
            out=ex.get("out", "results"),
            workers=int(ex.get("workers", "1")),
            record_time=parse_bool(ex.get("record_time", "true")),
            stop_when_solved=parse_bool(ex.get("stop_when_solved", "false")),
            max_wall_seconds=float(ex["max_wall_seconds"]) if "max_wall_seconds" in ex else None,
            oracle=float(ex["oracle"]) if "oracle" in ex else None,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    cfg.validate()
    return cfg


def load_config_file(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return load_config(text)


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------


def _algorithm_config(spec: AlgorithmSpec, episodes: int):
    try:
        if spec.name == "capi":
            cfg = CapiConfig(**spec.params)
            cfg.validate()
            return cfg
        if spec.name == "pubmdp_q":
            return {**_PUBMDP_Q_FIELDS, **spec.params}
        cfg = BaselineConfig(algorithm=spec.name, episodes=episodes, **spec.params)
        cfg.validate()
        return cfg
    except TypeError as e:
        raise ConfigError(str(e)) from None
    except GameError as e:
        raise ConfigError(str(e)) from None


_GRAPHS: dict = {}


def run_single(
    game_name: str,
    spec: AlgorithmSpec,
    seed: int,
    episodes: int,
    eval_every: int,
    target: float | None = None,
    record_time: bool = True,
    max_wall_seconds: float | None = None,
) -> list[tuple]:
    """Train once; returns ``(episode, greedy_value, best_value, wall_ms)`` records."""
    game = make_game(game_name)
    rng = stream(seed, "train")
    t0 = time.perf_counter()
    deadline = None if max_wall_seconds is None else t0 + max_wall_seconds
    records: list[tuple] = []

    def ms() -> float:
        return (time.perf_counter() - t0) * 1000.0 if record_time else 0.0

    if spec.name == "pubmdp_q":
        params = _algorithm_config(spec, episodes)
        graph = _GRAPHS.get(game_name)
        if graph is None:
            graph = _GRAPHS[game_name] = build_belief_graph(game)
        res = pubmdp_q_learning(
            game, episodes, params["alpha"], params["epsilon"], rng, graph=graph,
            eval_every=eval_every, target=target, deadline=deadline,
        )
        best = -np.inf
        for ep, v in res.curve:
            best = max(best, v)
            records.append((ep, v, best, ms()))
        return records
    if spec.name == "capi":
        cfg = _algorithm_config(spec, episodes)
        run = train_capi(
            game, cfg, rng, episodes, eval_every=eval_every, target=target,
            record_time=record_time, init_rng=stream(seed, "init"), deadline=deadline,
        )
        return [(ep, v, b, t) for ep, v, b, _, t in run.curve]
    cfg = _algorithm_config(spec, episodes)
    cfg.eval_every = eval_every
    run = train_baseline(game, cfg, rng, target=target, deadline=deadline)
    return [(ep, v, b, ms()) for ep, v, b in run.curve]


def _job(args):
    game, spec, seed, cfg_episodes, eval_every, target, record_time, wall = args
    return run_single(game, spec, seed, cfg_episodes, eval_every, target, record_time, wall)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=,\-\[\]]+", "_", text)


def write_run_csv(path: Path, seed: int, records: list[tuple]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for ep, v, b, t in records:
        w.writerow([seed, ep, f"{v:.9f}", f"{b:.9f}", f"{t:.1f}"])
    path.write_text(buf.getvalue())


def summarize(best_values: list[float], oracle: float | None) -> dict:
    out = {
        "min": min(best_values),
        "median": statistics.median(best_values),
        "max": max(best_values),
        "mean": statistics.fmean(best_values),
    }
    out["solve_rate"] = None if oracle is None else sum(v >= oracle - SOLVE_TOL for v in best_values) / len(best_values)
    return out


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run every (game, algorithm setting, seed); writes per-seed CSVs and ``summary.json``."""
    cfg.validate()
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory: {e}") from None
    oracles = {g: (cfg.oracle if cfg.oracle is not None else oracle_value(g)) for g in cfg.games}
    jobs, keys = [], []
    for g in cfg.games:
        target = oracles[g] if cfg.stop_when_solved else None
        for spec in cfg.algorithms:
            for seed in cfg.seeds:
                jobs.append((g, spec, seed, cfg.episodes, cfg.eval_every, target, cfg.record_time, cfg.max_wall_seconds))
                keys.append((g, spec, seed))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_job, jobs))
    else:
        results = [_job(j) for j in jobs]

    groups: dict = {}
    for (g, spec, seed), records in zip(keys, results):
        d = out / _slug(g) / _slug(spec.label)
        d.mkdir(parents=True, exist_ok=True)
        write_run_csv(d / f"seed_{seed}.csv", seed, records)
        grp = groups.setdefault((g, spec.label), {"spec": spec, "best": [], "final": []})
        grp["best"].append(records[-1][2])
        grp["final"].append(records[-1][1])
    summary = {
        "version": SUMMARY_VERSION,
        "deterministic": cfg.deterministic,
        "episodes": cfg.episodes,
        "eval_every": cfg.eval_every,
        "seeds": list(cfg.seeds),
        "groups": [],
    }
    for (g, label), grp in groups.items():
        entry = {
            "game": g,
            "algorithm": label,
            "name": grp["spec"].name,
            "params": {k: list(v) if isinstance(v, tuple) else v for k, v in grp["spec"].params.items()},
            "oracle": oracles[g],
            "best_values": grp["best"],
            "final_values": grp["final"],
        }
        entry.update(summarize(grp["best"], oracles[g]))
        summary["groups"].append(entry)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def recount_solve_rate(run_dir: str | Path, oracle: float) -> float:
    """Solve rate recomputed from the raw per-seed CSVs of one group directory."""
    files = sorted(Path(run_dir).glob("seed_*.csv"))
    solved = 0
    for f in files:
        with open(f) as fh:
            rows = list(csv.DictReader(fh))
        solved += max(float(r["best_value"]) for r in rows) >= oracle - SOLVE_TOL
    return solved / len(files)


# ---------------------------------------------------------------------------
# plot data
# ---------------------------------------------------------------------------


def emit_plot_data(summary_paths, out_path: str | Path) -> list[tuple]:
    """Long-format ``game,algorithm,statistic,value`` rows plus one oracle row per game."""
    paths = [Path(p) for p in summary_paths]
    if not paths:
        raise ConfigError("no summary files given")
    rows: list[tuple] = []
    oracles: dict = {}
    for p in paths:
        try:
            data = json.loads(p.read_text())
            groups = data["groups"]
            for grp in groups:
                for stat in STATISTICS:
                    rows.append((grp["game"], grp["algorithm"], stat, grp[stat]))
                oracles.setdefault(grp["game"], grp["oracle"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise ConfigError(f"malformed summary {p}: {e}") from None
    for g, v in oracles.items():
        rows.append((g, "oracle", "optimum", v))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["game", "algorithm", "statistic", "value"])
    for r in rows:
        w.writerow(["" if x is None else x for x in r])
    Path(out_path).write_text(buf.getvalue())
    return rows
