"""
ShapeBench 1.0 - Main Entry Point
Shape correspondence benchmarking from one JSON experiment config.
"""

import argparse
import sys
import os
from pathlib import Path

# Add src to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from constants import AppConstants
from debug import close_log_file, log_error, log_info, setup_logging
from errors import ConfigError, ShapeBenchError

STAGE_COMMANDS = ("generate", "correspond", "evaluate", "validate", "run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapebench",
                                     description="Benchmark shape correspondence methods on synthetic ensembles.")
    parser.add_argument("--version", action="version", version=f"{AppConstants.APP_NAME} {AppConstants.VERSION}")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGE_COMMANDS:
        cmd = sub.add_parser(name, help=f"{name} stage" if name != "run" else "all stages and the report")
        cmd.add_argument("--config", required=True, type=Path, help="experiment JSON")
        cmd.add_argument("--out", type=Path, help="run directory (overrides output_dir)")
        cmd.add_argument("--workers", type=int, help="worker threads, 0 = physical cores")
        if name in ("correspond", "evaluate", "validate"):
            cmd.add_argument("--method", action="append", help="limit to this method (repeatable)")

    report = sub.add_parser("report", help="cross-method summary of a run directory")
    report.add_argument("--out", required=True, type=Path, help="run directory")
    report.add_argument("--config", type=Path, help="experiment JSON (defaults to the run's snapshot)")

    params = sub.add_parser("params", help="list documented experiment parameters")
    params.add_argument("query", nargs="?", default="", help="filter by name, section or alias")
    return parser


def print_parameters(query: str) -> int:
    from core.settings_database import (get_categories, get_parameter_info, get_parameters_by_category,
                                        search_parameters)

    info = get_parameter_info(query)
    if info:
        print(f"{query} ({info['name']}, {info['category']})")
        print(f"    type={info['type']} default={info.get('default')!r}")
        if "range" in info:
            print(f"    range={info['range']}")
        if "options" in info:
            print(f"    options={info['options']}")
        print(f"    {info.get('tooltip', '')}")
        return AppConstants.EXIT_OK

    matches = search_parameters(query) if query else None
    shown = 0
    for category in get_categories():
        entries = get_parameters_by_category(category)
        keys = sorted(k for k in entries if matches is None or k in matches)
        if not keys:
            continue
        print(f"[{category}]")
        for key in keys:
            print(f"  {key:<34} {entries[key]['type']:<15} default={entries[key].get('default')!r}")
            print(f"      {entries[key].get('tooltip', '')}")
        shown += len(keys)
    if not shown:
        print(f"No parameters match '{query}'")
    return AppConstants.EXIT_OK


def run_command(args) -> int:
    from core.config_manager import load_experiment
    from pipeline import ExperimentRunner, write_report

    if args.command == "report":
        experiment = None
        if args.config:
            experiment = load_experiment(args.config, check_paths=False)[1]
        setup_logging(args.log_level, args.out / AppConstants.LOG_FILE)
        report = write_report(args.out, experiment)
        return AppConstants.EXIT_STAGE_FAILURE if report.failed else AppConstants.EXIT_OK

    manager, experiment = load_experiment(args.config, check_paths=args.command in ("generate", "run"))
    runner = ExperimentRunner(experiment, args.out, manager, args.workers)
    setup_logging(args.log_level, runner.run_dir / AppConstants.LOG_FILE)
    log_info(f"{AppConstants.APP_NAME} {args.command}: '{experiment.name}' -> {runner.run_dir} "
             f"({runner.workers} worker(s))")

    if args.command == "run":
        report = runner.run()
        return AppConstants.EXIT_STAGE_FAILURE if report.failed else AppConstants.EXIT_OK
    if args.command == "generate":
        if experiment.source is not None:
            runner.artifacts.snapshot_config(experiment.source)
            runner.artifacts.save()
        runner.generate()
        return AppConstants.EXIT_OK

    stage = getattr(runner, args.command)
    outcomes = stage(args.method)
    failed = [name for name, o in outcomes.items()
              if getattr(o, "status", None) == "failed" or (isinstance(o, dict) and "error" in o)]
    return AppConstants.EXIT_STAGE_FAILURE if failed else AppConstants.EXIT_OK


def main(argv=None) -> int:
    """Main application entry point."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        if args.command == "params":
            return print_parameters(args.query)
        return run_command(args)
    except ConfigError as e:
        log_error(f"config error: {e}")
        return AppConstants.EXIT_CONFIG_ERROR
    except ShapeBenchError as e:
        log_error(str(e))
        return AppConstants.EXIT_STAGE_FAILURE
    finally:
        close_log_file()


if __name__ == "__main__":
    sys.exit(main())
