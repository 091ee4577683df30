"""Command line front end: simulate, fit, decode, compare, validate.

Each subcommand reads an optional JSON run configuration and lets
individual flags override the file's values. Exit codes: 0 on success,
2 when inputs or configuration are invalid, 3 when a numerical
procedure fails.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .exceptions import NumericalError, ValidationError
from .pipeline import (
    RunConfig,
    config_from_mapping,
    read_config,
    run_compare,
    run_decode,
    run_fit,
    run_simulate,
    run_validate,
)

_OVERRIDE_FLAGS = {
    "variant": "variant",
    "panel": "panel",
    "populations": "populations",
    "adjacency": "adjacency",
    "output_dir": "output_dir",
    "season_length": "season_length",
    "interpolate_populations": "interpolate_populations",
    "chains": "n_chains",
    "decode_draws": "decode_draws",
    "iterations": "sampler.n_iterations",
    "burn_in": "sampler.burn_in",
    "thin": "sampler.thin",
    "seed": "sampler.seed",
    "evidence_samples": "evidence.n_samples",
    "evidence_repeats": "evidence.n_repeats",
    "evidence_seed": "evidence.seed",
}


def _add_run_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON run configuration file")
    sub.add_argument("--variant", help="model variant tag")
    sub.add_argument("--panel", help="panel file")
    sub.add_argument("--populations", help="populations file")
    sub.add_argument("--adjacency", help="adjacency file")
    sub.add_argument("--output-dir", dest="output_dir", help="artifact directory")
    sub.add_argument("--season-length", dest="season_length", type=int)
    sub.add_argument(
        "--interpolate-populations",
        dest="interpolate_populations",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="fill population gaps linearly from anchor months",
    )
    sub.add_argument("--chains", type=int, help="independent chains to run")
    sub.add_argument("--decode-draws", dest="decode_draws", type=int)
    sub.add_argument("--iterations", type=int, help="sampler iterations")
    sub.add_argument("--burn-in", dest="burn_in", type=int)
    sub.add_argument("--thin", type=int)
    sub.add_argument("--seed", type=int, help="sampler seed")
    sub.add_argument("--evidence-samples", dest="evidence_samples", type=int)
    sub.add_argument("--evidence-repeats", dest="evidence_repeats", type=int)
    sub.add_argument("--evidence-seed", dest="evidence_seed", type=int)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {
        key: getattr(args, attr)
        for attr, key in _OVERRIDE_FLAGS.items()
        if getattr(args, attr, None) is not None
    }
    if args.config:
        return read_config(args.config, overrides)
    flat: dict = {}
    for key, value in overrides.items():
        if "." in key:
            section, _, inner = key.partition(".")
            flat.setdefault(section, {})[inner] = value
        else:
            flat[key] = value
    return config_from_mapping(flat, base=Path.cwd())


def _cmd_simulate(args: argparse.Namespace) -> int:
    scenario = run_simulate(
        args.output_dir,
        variant=args.variant,
        n_strains=args.strains,
        n_locations=args.locations,
        n_months=args.months,
        season_length=args.season_length,
        seed=args.seed,
        population=args.population,
    )
    print(f"wrote panel.csv, populations.csv, adjacency.csv, truth.csv, "
          f"scenario.json to {args.output_dir}")
    print(f"variant {scenario['variant']}: "
          f"{scenario['epidemic_months']} epidemic strain-months")
    return 0


def _cmd_fit(args: argparse.Namespace) -> int:
    manifest = run_fit(_config_from_args(args))
    print(f"fit {manifest['variant']}: {manifest['status']} "
          f"in {manifest['runtime_seconds']}s")
    for kind, value in sorted(manifest["outputs"].items()):
        names = value if isinstance(value, list) else [value]
        print(f"  {kind}: {', '.join(names)}")
    return 0


def _cmd_decode(args: argparse.Namespace) -> int:
    report = run_decode(_config_from_args(args))
    print(f"wrote {', '.join(report['outputs'])}")
    print(f"highest posterior epidemic probability: "
          f"{report['max_probability']:.4f}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    configs = [read_config(path) for path in args.configs]
    rows = run_compare(configs, output_path=args.output)
    header = (
        f"{'model':16s} {'log ML (IS)':>14s} {'sd':>7s} {'P(IS)':>8s}"
        f" {'log ML (BS)':>14s} {'sd':>7s} {'P(BS)':>8s}"
    )
    print(header)
    for r in rows:
        print(
            f"{r['model']:16s} {r['log_ml_is']:14.2f} {r['se_is']:7.2f} "
            f"{r['prob_is']:8.4f} {r['log_ml_bs']:14.2f} {r['se_bs']:7.2f} "
            f"{r['prob_bs']:8.4f}"
        )
    if args.output:
        print(f"table written to {args.output}")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    checks = run_validate(_config_from_args(args))
    for key, value in checks.items():
        print(f"{key}: {value}")
    print("inputs look consistent")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="multistrain",
        description="Multi-strain epidemic surveillance pipeline",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", help="draw a synthetic panel")
    sim.add_argument("--output-dir", dest="output_dir", required=True)
    sim.add_argument("--variant", default="frank_1")
    sim.add_argument("--strains", type=int, default=2)
    sim.add_argument("--locations", type=int, default=4)
    sim.add_argument("--months", type=int, default=60)
    sim.add_argument("--season-length", dest="season_length", type=int, default=12)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--population", type=float, default=2.0e5)
    sim.set_defaults(handler=_cmd_simulate)

    fit = commands.add_parser("fit", help="sample the posterior")
    _add_run_flags(fit)
    fit.set_defaults(handler=_cmd_fit)

    decode = commands.add_parser(
        "decode", help="epidemic probabilities from stored draws"
    )
    _add_run_flags(decode)
    decode.set_defaults(handler=_cmd_decode)

    compare = commands.add_parser(
        "compare", help="marginal likelihood table across fitted models"
    )
    compare.add_argument("configs", nargs="+", help="run configs of finished fits")
    compare.add_argument("--output", help="write the table to this CSV file")
    compare.set_defaults(handler=_cmd_compare)

    validate = commands.add_parser("validate", help="check inputs without fitting")
    _add_run_flags(validate)
    validate.set_defaults(handler=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
