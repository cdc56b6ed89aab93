"""Command-line entry point: run experiments, sweeps, and plots."""
from __future__ import annotations

import argparse
import sys

from .errors import ConfigError


def _parse_spec(pairs):
    spec = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"plot spec entries must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        spec[key] = value
    return spec


def _parse_param(text):
    if "=" not in text:
        raise ConfigError("--param must look like name=v1,v2,... "
                          "(e.g. S_t=1,2,3 or gamma=0.01,0.1)")
    name, values = text.split("=", 1)
    return name.strip(), [v.strip() for v in values.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segab",
        description="Segmented analog broadcast experiments for federated learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run all cells of an experiment config")
    run.add_argument("config", help="path to a JSON config file")
    run.add_argument("--out", default=None, help="output directory override")
    run.add_argument("--seed", type=int, default=None, help="master seed override")
    run.add_argument("--jobs", type=int, default=1, help="parallel worker count")

    plot = sub.add_parser("plot", help="render plots from an aggregate CSV")
    plot.add_argument("aggregate", help="path to aggregate.csv or sweep_aggregate.csv")
    plot.add_argument("--spec", nargs="*", default=None,
                      help="plot options as key=value (metric=accuracy|gap)")
    plot.add_argument("--out", default="plots", help="output directory")

    sweep = sub.add_parser("sweep", help="run the experiment over a parameter sweep")
    sweep.add_argument("config", help="path to a JSON config file")
    sweep.add_argument("--param", required=True,
                       help="sweep spec, e.g. S_t=1,2,3,5 or gamma=0.01,0.05,0.1")
    sweep.add_argument("--out", default=None, help="output directory override")
    sweep.add_argument("--seed", type=int, default=None, help="master seed override")
    sweep.add_argument("--jobs", type=int, default=1, help="parallel worker count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            from dataclasses import replace

            from .experiments import ExperimentConfig, run_experiment

            config = ExperimentConfig.from_file(args.config)
            if args.seed is not None:
                config = replace(config, master_seed=args.seed)
            written, failures = run_experiment(config, out_dir=args.out,
                                               jobs=args.jobs)
            for path in written:
                print(path)
            if failures:
                print(f"{failures} cell(s) failed; aggregate marked incomplete",
                      file=sys.stderr)
                return 1
            return 0

        if args.command == "plot":
            from .experiments import emit_plots

            paths, _ = emit_plots(args.aggregate, args.out, _parse_spec(args.spec))
            for path in paths:
                print(path)
            return 0

        if args.command == "sweep":
            from dataclasses import replace

            from .experiments import ExperimentConfig, sweep_experiment

            config = ExperimentConfig.from_file(args.config)
            if args.seed is not None:
                config = replace(config, master_seed=args.seed)
            name, values = _parse_param(args.param)
            written, failures = sweep_experiment(config, name, values,
                                                 out_dir=args.out, jobs=args.jobs)
            for path in written:
                print(path)
            return 1 if failures else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
