"""Command-line entry point: ``run``, ``oracle`` and ``plot-data``.

Exit codes: 0 on success, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .fosg import GameError
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_plot_data,
    expand_grid,
    load_config_file,
    parse_seeds,
    run_experiment,
)
from .oracle import oracle_value
from .zoo import make_game


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pubcoord", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a config file or flags")
    run.add_argument("--config", help="INI experiment config")
    run.add_argument("--game", help="registry name, e.g. tiny_hanabi:A or trade_comm:4x4")
    run.add_argument("--algo", help="pubmdp_q, capi, iql, hql, vdn or sad")
    run.add_argument("--seeds", default="1", help="count N (seeds 0..N-1) or a comma list")
    run.add_argument("--episodes", type=int, default=1000)
    run.add_argument("--eval-every", type=int, default=100)
    run.add_argument("--out", default="results")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="algorithm option; comma-separated values form a grid")
    run.add_argument("--no-time", action="store_true", help="write 0 in wall_ms for byte-reproducible CSVs")
    run.add_argument("--stop-when-solved", action="store_true")

    orc = sub.add_parser("oracle", help="print the optimal expected return of a game")
    orc.add_argument("--game", required=True)
    orc.add_argument("--recompute", action="store_true", help="ignore the cached golden values")

    plot = sub.add_parser("plot-data", help="long-format CSV from summary files")
    plot.add_argument("--in", dest="inp", required=True, help="summary.json or a directory searched recursively")
    plot.add_argument("--out", required=True)
    return p


def _config_from_flags(args) -> ExperimentConfig:
    if not args.game or not args.algo:
        raise ConfigError("run needs --config, or both --game and --algo")
    raw = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v
    cfg = ExperimentConfig(
        games=[g.strip() for g in args.game.split(",")],
        algorithms=expand_grid(args.algo, raw) if args.algo in _algos() else [],
        seeds=parse_seeds(args.seeds),
        episodes=args.episodes,
        eval_every=args.eval_every,
        out=args.out,
        workers=args.workers,
        record_time=not args.no_time,
        stop_when_solved=args.stop_when_solved,
    )
    if args.algo not in _algos():
        raise ConfigError(f"unknown algorithm {args.algo!r}; choose from {_algos()}")
    cfg.validate()
    return cfg


def _algos():
    from .harness import ALGORITHMS

    return ALGORITHMS


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config_file(args.config) if args.config else _config_from_flags(args)
            summary = run_experiment(cfg)
            for g in summary["groups"]:
                rate = "n/a" if g["solve_rate"] is None else f"{g['solve_rate']:.3f}"
                print(f"{g['game']}\t{g['algorithm']}\tmean_best={g['mean']:.6f}\tsolve_rate={rate}")
            print(f"wrote {Path(cfg.out) / 'summary.json'}")
        elif args.command == "oracle":
            make_game(args.game)
            v = oracle_value(args.game, use_golden=not args.recompute)
            if v is None:
                print(f"{args.game}: optimum out of reach of the exact solvers", file=sys.stderr)
                return 1
            print(f"{v:.9f}")
        elif args.command == "plot-data":
            src = Path(args.inp)
            paths = sorted(src.rglob("summary.json")) if src.is_dir() else [src]
            rows = emit_plot_data(paths, args.out)
            print(f"wrote {len(rows)} rows to {args.out}")
    except (ConfigError, GameError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
