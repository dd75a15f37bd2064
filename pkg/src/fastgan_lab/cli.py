"""Command-line entry point: ``python -m fastgan_lab <command>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import tomli

from .games import LabeledDataset, read_samples_csv
from .harness import (
    ConfigError,
    build_game,
    compare_runs,
    emit_config,
    game_start,
    load_run,
    parse_config,
    run_experiment,
    sweep,
)
from .metrics import sample_set_metrics
from .oracles import run_oracle_suite
from .trainers import spectral_radius_jacobian, verify_local_nash

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("fastgan_lab")


def _parse_value(text: str):
    """Scalar literal in config syntax: 0.006, 3, true, "fastgan" (bare words become strings)."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def cmd_train(args) -> int:
    config = parse_config(args.config)
    log.info("resolved config:\n%s", emit_config(config))
    record = run_experiment(config)
    print(f"{config.name}: {record.status} after {len(record.steps)} iterations -> {record.run_dir}")
    if record.metrics:
        print("final metrics:", record.metrics[-1])
    if record.status == "diverged":
        print(record.error, file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK if record.status == "completed" else EXIT_ERROR


def cmd_compare(args) -> int:
    records = [load_run(d) for d in args.run_dirs]
    table = compare_runs(records, threshold=args.threshold)
    print(table.to_text(), end="")
    if args.csv:
        Path(args.csv).write_text(table.to_csv())
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = parse_config(args.config)
    values = [_parse_value(v.strip()) for v in args.values.split(",") if v.strip()]
    records = sweep(config, args.param, values)
    for v, r in zip(values, records):
        last = r.metrics[-1] if r.metrics else {}
        print(f"{args.param}={v}: {r.status} fid={last.get('fid', float('nan')):.5g}")
    return EXIT_DIVERGED if any(r.status == "diverged" for r in records) else EXIT_OK


def cmd_gradcheck(args) -> int:
    report = run_oracle_suite(args.cases, args.seed)
    print(report.summary())
    for f in report.failures:
        print("FAIL", f)
    return EXIT_OK if report.passed else EXIT_ERROR


def cmd_spectral(args) -> int:
    config = parse_config(args.config)
    if not config.is_game:
        raise ConfigError("game: spectral analysis needs an analytic game config")
    game = build_game(config)
    point = game.analytic_equilibrium if args.at == "equilibrium" else game_start(config, game)
    rule = "gda" if config.trainer.startswith("gda") else config.trainer
    an = spectral_radius_jacobian(game, point, config.eta_x, config.eta_y, rule)
    nash = verify_local_nash(game, point)
    np.set_printoptions(precision=6, suppress=True)
    print(f"game {game.name}, rule {rule}, eta_x {config.eta_x}, eta_y {config.eta_y}")
    print("J =\n", an.J)
    print("eigenvalues:", an.eigenvalues)
    print(f"spectral radius {an.spectral_radius:.12g} ({'contracting' if an.spectral_radius < 1 else 'not contracting'})")
    print("rotation ratios |Im/Re|:", an.rotation_ratios)
    print(f"local Nash: first-order {nash.first_order}, second-order {nash.second_order} ({nash.convention})")
    return EXIT_OK


def cmd_metrics(args) -> int:
    samples, labels = read_samples_csv(args.samples)
    dataset = LabeledDataset.from_csv(args.dataset)
    if labels is None:
        raise ConfigError(f"{args.samples}: generated samples need a label column for class-conditional metrics")
    record = sample_set_metrics(samples, labels, dataset, seed=args.seed)
    print(record.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fastgan_lab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="run one experiment config")
    s.add_argument("config")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("compare", help="compare finished run directories")
    s.add_argument("run_dirs", nargs="+")
    s.add_argument("--threshold", type=float, default=None, help="FID threshold (default: first run's final FID)")
    s.add_argument("--csv", default=None, help="also write the table as CSV")
    s.set_defaults(fn=cmd_compare)

    s = sub.add_parser("sweep", help="one run per value of a scalar config key")
    s.add_argument("config")
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated list")
    s.set_defaults(fn=cmd_sweep)

    s = sub.add_parser("gradcheck", help="finite-difference oracle suite for the autodiff engine")
    s.add_argument("--cases", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("spectral", help="update-map Jacobian analysis on an analytic game")
    s.add_argument("config")
    s.add_argument("--at", choices=("equilibrium", "start"), default="equilibrium")
    s.set_defaults(fn=cmd_spectral)

    s = sub.add_parser("metrics", help="score a CSV of generated samples against a dataset CSV")
    s.add_argument("samples")
    s.add_argument("dataset")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_metrics)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; partial run saved with status 'interrupted'", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
