"""Command line entry point: ``dhtm train|compare|inspect|plot``."""
from __future__ import annotations

import argparse
import json
import sys

from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig
from .runner import ENV_OUT_DIR, HarnessError, compare, default_out_dir, inspect, plot, run


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _assignments(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {pair!r}")
        out[key] = _value(value)
    return out


def _experiment(args) -> ExperimentConfig:
    config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    over = _assignments(args.set)
    if args.seed is not None:
        over["seeds"] = args.seed
    if args.episodes is not None:
        over["episodes"] = args.episodes
    if args.horizon is not None:
        over["agent.horizon"] = args.horizon
    if args.switch_episode is not None:
        over["switch_episode"] = args.switch_episode
    if args.export_frames:
        over["export_frames"] = True
    if args.plot:
        over["plot"] = True
    if args.timing:
        over["timing"] = True
    if args.workers is not None:
        over["workers"] = args.workers
    over["out_dir"] = args.out_dir or (config.out_dir if args.config else default_out_dir())
    return config.with_overrides(over)


def _experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, nargs="+", help="one or more trial seeds")
    p.add_argument("--episodes", type=int)
    p.add_argument("--horizon", type=int, help="TD prediction horizon T")
    p.add_argument("--out-dir", help=f"output directory (default ${ENV_OUT_DIR} or ./runs)")
    p.add_argument("--switch-episode", type=int, help="switch to the obscured field after this episode")
    p.add_argument("--export-frames", action="store_true", help="write every frame as a PGM image")
    p.add_argument("--plot", action="store_true", help="write SVG plots")
    p.add_argument("--timing", action="store_true", help="add a wall-clock column to steps.csv")
    p.add_argument("--workers", type=int, help="parallel worker processes across seeds")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dhtm", description="DHTM agent experiments on the pinball task")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run trials and write metrics and checkpoints")
    _experiment_flags(train)

    cmp_ = sub.add_parser("compare", help="run several variants on the same seeds")
    _experiment_flags(cmp_)
    cmp_.add_argument("--variant", nargs="+", action="append", required=True, metavar="NAME [KEY=VALUE ...]",
                      help="variant name followed by its overrides, repeatable")

    ins = sub.add_parser("inspect", help="summarize a checkpoint")
    ins.add_argument("checkpoint")

    pl = sub.add_parser("plot", help="write SVG plots for a finished run directory")
    pl.add_argument("run_dir")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            print(run(_experiment(args)))
        elif args.command == "compare":
            variants = [{"name": v[0], "overrides": _assignments(v[1:])} for v in args.variant]
            print(compare(_experiment(args), variants))
        elif args.command == "inspect":
            print(inspect(args.checkpoint))
        else:
            for path in plot(args.run_dir):
                print(path)
    except (ConfigError, CheckpointError, HarnessError, OSError) as exc:
        print(f"dhtm: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
