"""Command-line entry point: ``perdpp {train,eval,plot,dpp-bench}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .env import MapError, path_metrics, read_map
from .harness import ConfigError, Trainer, format_config, greedy_rollout, load_config
from .kernel import KernelError, brute_force_map, greedy_map_select, planted_kernel
from .qnet import TrainingError, load_checkpoint, save_checkpoint
from .reporting import ReportError, emit_report, replot

log = logging.getLogger("perdpp")


def _train(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    # fail on an unusable output directory before spending time on training
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {args.out}: {exc.strerror}") from exc
    t0 = time.perf_counter()
    trainer = Trainer(cfg)
    report = trainer.run()
    written = emit_report(report, args.out, trainer.grid)
    save_checkpoint(trainer.main, os.path.join(args.out, "checkpoint.json"))
    with open(os.path.join(args.out, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_config(cfg))
    summary = {
        "algorithm": cfg.algorithm, "map": report.map, "seed": cfg.seed,
        "final_rate": report.final_rate, "first_epoch": report.first_epoch,
        "path_length": report.best_length, "turns": report.best_turns,
        "reached_goal": report.reached_goal, "seconds": round(time.perf_counter() - t0, 2),
    }
    print(json.dumps(summary))
    log.info("wrote %d files to %s", len(written) + 2, args.out)
    return 0


def _eval(args) -> int:
    net = load_checkpoint(args.checkpoint)
    grid = read_map(args.map)
    # evaluation is greedy (epsilon = 0); --seed is accepted but nothing is random
    cells, reached = greedy_rollout(net, grid, args.max_steps)
    length, turns = path_metrics(cells)
    print(json.dumps({"path": [list(c) for c in cells], "length": length, "turns": turns,
                      "reached_goal": reached}))
    return 0


def _plot(args) -> int:
    for path in replot(args.run):
        print(path)
    return 0


def _dpp_bench(args) -> int:
    if not 1 <= args.m <= args.n:
        raise KernelError("need 1 <= m <= n")
    rng = np.random.default_rng(args.seed)
    agree, t_greedy, t_oracle = 0, 0.0, 0.0
    for _ in range(args.trials):
        K, planted = planted_kernel(args.n, args.m, rng)
        t = time.perf_counter()
        greedy = tuple(sorted(greedy_map_select(K, args.m)))
        t_greedy += time.perf_counter() - t
        t = time.perf_counter()
        oracle = brute_force_map(K, args.m)
        t_oracle += time.perf_counter() - t
        agree += greedy == oracle
    print(json.dumps({
        "n": args.n, "m": args.m, "trials": args.trials, "seed": args.seed,
        "agreement": agree / args.trials if args.trials else 1.0,
        "greedy_ms": 1e3 * t_greedy / max(1, args.trials),
        "oracle_ms": 1e3 * t_oracle / max(1, args.trials),
    }))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="perdpp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("train", parents=[common], help="train one agent and write a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_train)

    p = sub.add_parser("eval", parents=[common], help="greedy rollout of a saved network")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--map", required=True, help="map file or shipped map name")
    p.add_argument("--max-steps", type=int, default=200)
    p.set_defaults(func=_eval)

    p = sub.add_parser("plot", parents=[common], help="redraw the SVGs of a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(func=_plot)

    p = sub.add_parser("dpp-bench", parents=[common], help="greedy vs exhaustive MAP on planted kernels")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--trials", type=int, default=100)
    p.set_defaults(func=_dpp_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "dpp-bench" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (ConfigError, MapError, KernelError, ReportError, TrainingError, ValueError, OSError) as exc:
        print(f"perdpp {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
