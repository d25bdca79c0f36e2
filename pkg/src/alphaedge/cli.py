"""Command line entry points.

Exit codes: 0 success, 1 configuration problems, 2 data problems, 3 any
other failure raised by the package.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .errors import AlphaEdgeError, ConfigError, DataError
from .harness import SWEEP_AXES, SweepSpec, load_config, run_experiment, run_sweep
from .streams import SynthSpec, generate_synthetic, write_csv


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alphaedge",
        description="Decentralized online learning simulator with learned aggregation weights",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override: run this single seed")
        p.add_argument("--out", default="results", help="output directory (default: results)")
        p.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt")
        p.add_argument("--workers", type=int, default=1, help="threads for batch processing")
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    run_p = sub.add_parser("run", help="run the configured strategy x seed grid")
    common(run_p)

    sweep_p = sub.add_parser("sweep", help="repeat the grid along one config axis")
    common(sweep_p)
    sweep_p.add_argument("--axis", default=None, help=f"one of {sorted(SWEEP_AXES)}")
    sweep_p.add_argument(
        "--values", default=None, help="comma-separated values for the sweep axis"
    )

    gen_p = sub.add_parser("gen", help="materialize the synthetic streams as a CSV")
    gen_p.add_argument("--config", required=True, help="config with a data.synthetic section")
    gen_p.add_argument("--seed", type=int, default=None, help="override the data seed")
    gen_p.add_argument("--out", default="dataset.csv", help="CSV path (default: dataset.csv)")
    gen_p.add_argument("--quiet", action="store_true")

    val_p = sub.add_parser("validate", help="check a config file and exit")
    val_p.add_argument("--config", required=True)
    val_p.add_argument("--quiet", action="store_true")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    run_experiment(config, args.out, fmt=args.fmt, workers=args.workers, quiet=args.quiet)
    if not args.quiet:
        print(f"wrote {args.out}/summary.json")
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seeds=(args.seed,))
    if (args.axis is None) != (args.values is None):
        raise ConfigError("--axis and --values must be given together")
    if args.axis is not None:
        config = replace(
            config, sweep=SweepSpec(axis=args.axis, values=tuple(args.values.split(",")))
        )
    if config.sweep is None:
        raise ConfigError("no sweep section in the config and no --axis/--values given")
    run_sweep(config, args.out, fmt=args.fmt, workers=args.workers, quiet=args.quiet)
    if not args.quiet:
        print(f"wrote {args.out}/sweep.json")
    return 0


def _cmd_gen(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if not isinstance(config.data, SynthSpec):
        raise ConfigError("gen needs a config with a data.synthetic section")
    spec = config.data
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    streams = generate_synthetic(spec)
    schema = write_csv(streams, args.out)
    sidecar = os.path.splitext(args.out)[0] + ".schema.json"
    with open(sidecar, "w") as fh:
        json.dump(
            {
                "edge_col": schema.edge_col,
                "time_col": schema.time_col,
                "label_col": schema.label_col,
                "feature_cols": list(schema.feature_cols),
                "batch_size": spec.batch_size,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    if not args.quiet:
        print(f"wrote {args.out} and {sidecar}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if not args.quiet:
        print(
            f"config ok: n={config.sim.n}, strategies={list(config.strategies)}, "
            f"seeds={list(config.seeds)}"
        )
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "sweep": _cmd_sweep,
        "gen": _cmd_gen,
        "validate": _cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (AlphaEdgeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
