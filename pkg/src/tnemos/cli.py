"""Command-line entry point: ``tnemos <command> --config run.json``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .data import DataError
from .pipeline import (
    ALL_MODELS,
    ConfigError,
    PipelineOutput,
    RunConfig,
    read_station_params,
    run_fits,
    run_verification,
    write_fit_outputs,
    write_outputs,
    write_verify_outputs,
)
from .synthetic import generate_dataset, write_synthetic

log = logging.getLogger("tnemos")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--lead-time", type=int, action="append", dest="lead_times", metavar="L",
                        help="restrict to this lead time (repeatable)")
    common.add_argument("--model", action="append", dest="models", choices=ALL_MODELS,
                        help="restrict to this model (repeatable; raw is always scored)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--output-dir", help="override the configured output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="tnemos", description="Truncated-normal EMOS post-processing with semi-local interpolation."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write a synthetic station network")
    sub.add_parser("fit", parents=[common], help="rolling group fits (params.csv, clusters.csv)")
    sub.add_parser("interpolate", parents=[common], help="fits plus per-station parameters (station_params.csv)")
    sub.add_parser("verify", parents=[common], help="score station_params.csv against observations")
    sub.add_parser("pipeline", parents=[common], help="fit, interpolate and verify in one go")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    config = RunConfig.from_dict(raw)
    changes = {}
    if args.lead_times:
        changes["lead_times"] = tuple(sorted(set(args.lead_times)))
    if args.models:
        changes["models"] = tuple(m for m in ALL_MODELS if m in set(args.models) | {"raw"})
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    config = dataclasses.replace(config, **changes)
    config.validate()
    return config


def _simulate(config: RunConfig) -> None:
    target = config.data_dir or config.output_dir
    data = generate_dataset(config.synthetic_config())
    paths = write_synthetic(data, target)
    log.info("wrote %s", ", ".join(str(p) for p in paths.values()))


def run(args: argparse.Namespace) -> None:
    config = load_config(args)
    if args.command == "simulate":
        _simulate(config)
        return
    dataset = config.load()
    if args.command in ("fit", "interpolate"):
        fits = run_fits(dataset, config)
        write_fit_outputs(fits, config.output_dir, station_params=args.command == "interpolate")
    elif args.command == "verify":
        station_params = read_station_params(Path(config.output_dir) / "station_params.csv")
        write_verify_outputs(run_verification(dataset, station_params, config), config.output_dir)
    else:
        fits = run_fits(dataset, config)
        verify = run_verification(dataset, fits.station_params, config)
        write_outputs(PipelineOutput(fits, verify), config.output_dir)
    log.info("outputs in %s", config.output_dir)


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except (ConfigError, DataError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"tnemos {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
