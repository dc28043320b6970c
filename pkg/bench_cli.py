"""Command-line driver: ``run``, ``validate`` and ``inspect``.

Failures of the engine are reported as one JSON line on stderr and mapped to the exit codes of
:mod:`errors`; anything unexpected exits with 1.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

from error_metrics import ErrorReport
from errors import ConfigError, FligaError
from floating_basis import FloatingPatch
from output_writers import (load_checkpoint, save_checkpoint, write_checkpoint_points, write_control_points,
                            write_error_csv, write_manifest, write_point_cloud, write_quadrature_points)
from scenario_config import ScenarioConfig
from scenarios import get_runner, run_scenario

logger = logging.getLogger(__name__)

OUTPUT_DIR_ENV = "FLIGA_OUTPUT_DIR"
LOG_LEVEL_ENV = "FLIGA_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fliga", description="Floating isogeometric flow benchmarks")
    parser.add_argument("--log-level", default=os.environ.get(LOG_LEVEL_ENV, "INFO"),
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging level (default: %(default)s)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="execute a scenario")
    run.add_argument("config", help="scenario YAML document")
    run.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_DIR_ENV} or the config's)")
    run.add_argument("--steps", type=int, help="override stepping.n_steps")
    run.add_argument("--fd-check", action="store_true", help="verify tangents by finite differences")
    run.add_argument("--threads", type=int, default=1, help="assembly threads (default: %(default)s)")

    validate = subparsers.add_parser("validate", help="check a scenario document")
    validate.add_argument("config", help="scenario YAML document")

    inspect = subparsers.add_parser("inspect", help="dump a checkpoint to CSV")
    inspect.add_argument("checkpoint", help="checkpoint JSON document")
    inspect.add_argument("--output-dir", help="directory for the dumps (default: next to the checkpoint)")
    return parser


def output_directory(option: str | None, config: ScenarioConfig) -> Path:
    directory = Path(option or os.environ.get(OUTPUT_DIR_ENV) or config.output.directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def load_config(path: str, steps: int | None = None) -> ScenarioConfig:
    config = ScenarioConfig.from_yaml(path)
    if steps is not None:
        if steps < 0:
            raise ConfigError(f"--steps must be non-negative, got {steps}")
        config.stepping.n_steps = steps
    return config


def command_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.steps)
    if args.threads < 1:
        raise ConfigError(f"--threads must be at least 1, got {args.threads}")
    directory = output_directory(args.output_dir, config)
    stem = directory / config.name
    artifacts = []

    if config.stepping.n_steps == 0:
        simulation = get_runner(config).build(args.fd_check, args.threads)
        artifacts.append(write_point_cloud(simulation, f"{stem}_initial_points.txt"))
        artifacts.append(write_control_points(simulation.patch, f"{stem}_initial_control_points.csv"))
        artifacts.append(write_quadrature_points(simulation.point_set, f"{stem}_initial_quadrature.csv"))
        write_manifest(f"{stem}_manifest.json", config, ErrorReport(), [], [str(p) for p in artifacts])
        print(f"{config.name}: initial state written to {directory}")
        return 0

    snapshots = directory if config.output.snapshot_interval > 0 else None
    run = run_scenario(config, fd_check=args.fd_check, threads=args.threads, snapshot_dir=snapshots)
    artifacts += run.snapshots
    artifacts.append(write_error_csv(run.report, f"{stem}_errors.csv"))
    if config.output.write_points:
        artifacts.append(write_point_cloud(run.simulation, f"{stem}_points.txt"))
        artifacts.append(write_control_points(run.simulation.patch, f"{stem}_control_points.csv"))
    if config.output.checkpoint:
        artifacts.append(save_checkpoint(run.simulation, f"{stem}_checkpoint.json"))
    write_manifest(f"{stem}_manifest.json", config, run.report, run.simulation.regulation_reports,
                   [str(p) for p in artifacts])

    record = run.report.last
    if record is not None:
        print(f"{config.name}: step {record.step}, t = {record.time:.6g}, "
              f"L2 vx = {record.L2_vx:.3f}, L2 vy = {record.L2_vy:.3f}, L2 p = {record.L2_p:.3f}")
    for key, value in run.report.summary.items():
        print(f"  {key}: {value}")
    return 0


def command_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    print(f"ok: {config.name} ({config.kind.value}) {config.config_hash()}")
    return 0


def command_inspect(args: argparse.Namespace) -> int:
    path = Path(args.checkpoint)
    try:
        data = load_checkpoint(path)
    except (OSError, ValueError, KeyError) as error:
        raise ConfigError(f"unreadable checkpoint {path}: {error}") from error
    directory = Path(args.output_dir) if args.output_dir else path.parent
    directory.mkdir(parents=True, exist_ok=True)
    controls = write_control_points(FloatingPatch.from_dict(data["patch"]), directory / f"{path.stem}_control_points.csv")
    points = write_checkpoint_points(data, directory / f"{path.stem}_points.txt")
    print(f"step {data['step']}, t = {data['time']:.6g}: wrote {controls} and {points}")
    return 0


COMMANDS = {"run": command_run, "validate": command_validate, "inspect": command_inspect}


def cli_main(argv: list[str] | None = None) -> int:
    """Parse ``argv``, run the command and return the process exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    try:
        return COMMANDS[args.command](args)
    except FligaError as error:
        logger.error("%s failed: %s", args.command, error)
        print(json.dumps(error.to_record()), file=sys.stderr)
        return error.exit_code
    except Exception:
        logger.exception("unexpected failure in %s", args.command)
        print(json.dumps({"error": "unexpected", "message": "see log", "step": None}), file=sys.stderr)
        return 1
