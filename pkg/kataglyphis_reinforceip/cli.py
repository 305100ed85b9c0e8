"""Command-line entry point ``reinforce-ip``.

Exit codes: 0 success, 2 invalid configuration, unknown recipe or an
unsolvable setup (shape mismatch, singular covariance),
3 training diverged, 4 I/O error, 5 a gradient check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path

from loguru import logger

from .config import build_run, load_run_config, to_mapping
from .exceptions import ConfigurationError, DivergenceError, InputShapeError, NumericError
from .experiments import (
    RECIPES,
    SCALES,
    ExperimentRecipe,
    output_directory,
    run_recipe,
    write_result,
)
from .gradcheck import run_all
from .reinforce import WORKERS_ENV, solve
from .reporting import make_manifest, write_solve_outputs


EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4
EXIT_GRADCHECK = 5

LOG_FILE = Path("logs") / "reinforce_ip.log"


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the solve, experiment and gradcheck subcommands."""
    parser = argparse.ArgumentParser(
        prog="reinforce-ip",
        description="Solve inverse problems f(x) + noise = y with REINFORCE-trained iteration policies.",
        epilog=f"Set {WORKERS_ENV}=<n> to roll out trajectories on n threads.",
    )
    parser.add_argument("--verbose", action="store_true", help="log debug messages to stderr")
    commands = parser.add_subparsers(dest="command", required=True)

    solve_parser = commands.add_parser("solve", help="train and solve from a JSON run file")
    solve_parser.add_argument("config", type=Path, help="path to the run configuration (JSON)")

    experiment = commands.add_parser("experiment", help="run a scripted study")
    experiment.add_argument("name", help=f"one of: {', '.join(RECIPES)}")
    experiment.add_argument("--scale", choices=SCALES, default="desk")
    experiment.add_argument("--seed", type=int, default=0)
    experiment.add_argument(
        "--output-dir", type=Path, default=Path("runs"), help="base directory of the run folder"
    )
    experiment.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        dest="overrides",
        help="override a train field, VALUE is parsed as JSON (e.g. --set max_updates=200)",
    )

    gradcheck = commands.add_parser("gradcheck", help="verify analytic gradients")
    gradcheck.add_argument("--seed", type=int, default=0)
    gradcheck.add_argument(
        "--inject-bug",
        action="store_true",
        help="corrupt one score entry so the checks must fail",
    )
    return parser


def configure_logging(*, verbose: bool) -> None:
    """Send logs to stderr only; :func:`add_log_file` adds the run's file sink."""
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO")


def add_log_file(output_dir: str | Path) -> None:
    """Also log to a rotating file below ``output_dir``."""
    logger.add(Path(output_dir) / LOG_FILE, rotation="500 MB", level="DEBUG")


def cmd_solve(config_path: Path) -> int:
    """Run one solve described by a JSON file."""
    config = load_run_config(config_path)
    add_log_file(config.output.directory)
    problem, train_config = build_run(config)
    report = solve(problem, train_config)
    manifest = make_manifest(to_mapping(config), config.seed)
    write_solve_outputs(
        config.output.directory,
        report,
        manifest,
        include_ensemble=config.output.write_ensemble,
    )
    return EXIT_OK


def parse_overrides(items: Sequence[str]) -> dict[str, object]:
    """Turn ``KEY=VALUE`` strings into a mapping with JSON-decoded values."""
    overrides: dict[str, object] = {}
    for item in items:
        key, separator, text = item.partition("=")
        if not separator or not key:
            error_message = f"Override {item!r} is not of the form KEY=VALUE"
            raise ConfigurationError(error_message)
        try:
            overrides[key] = json.loads(text)
        except json.JSONDecodeError as error:
            error_message = f"Override {key!r} has no valid JSON value: {text!r}"
            raise ConfigurationError(error_message) from error
    return overrides


def cmd_experiment(
    name: str,
    scale: str,
    seed: int,
    output_dir: Path,
    overrides: Sequence[str] = (),
) -> int:
    """Run a registered recipe into a fresh timestamped directory."""
    if name not in RECIPES:
        logger.error("Unknown recipe {!r}; available: {}", name, ", ".join(RECIPES))
        return EXIT_CONFIG
    recipe = ExperimentRecipe(
        name=name,
        scale=scale,
        seed=seed,
        overrides=parse_overrides(overrides),
        output_dir=output_dir,
    )
    result = run_recipe(recipe)
    write_result(result, output_directory(recipe))
    return EXIT_OK


def cmd_gradcheck(seed: int, *, inject_bug: bool = False) -> int:
    """Run every gradient check; non-zero when any fails."""
    results = run_all(seed, inject_bug=inject_bug)
    for result in results:
        print(f"{result.name}: max relative error {result.max_error:.3e}")  # noqa: T201
    if all(result.passed for result in results):
        logger.success("All {} gradient checks passed", len(results))
        return EXIT_OK
    return EXIT_GRADCHECK


def main(argv: Sequence[str] | None = None) -> int:
    """Parse arguments, dispatch, and map failures onto exit codes."""
    args = build_parser().parse_args(argv)
    configure_logging(verbose=args.verbose)
    if args.command == "experiment":
        add_log_file(args.output_dir)
    elif args.command == "gradcheck":
        add_log_file(Path())
    try:
        if args.command == "solve":
            return cmd_solve(args.config)
        if args.command == "experiment":
            return cmd_experiment(
                args.name, args.scale, args.seed, args.output_dir, args.overrides
            )
        return cmd_gradcheck(args.seed, inject_bug=args.inject_bug)
    except ConfigurationError as error:
        logger.error("Invalid configuration: {}", error)
        return EXIT_CONFIG
    except (InputShapeError, NumericError) as error:
        logger.error("Configuration cannot be solved: {}", error)
        return EXIT_CONFIG
    except DivergenceError as error:
        logger.error("Training diverged: {}", error)
        return EXIT_DIVERGED
    except OSError as error:
        logger.error("I/O error: {}", error)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
