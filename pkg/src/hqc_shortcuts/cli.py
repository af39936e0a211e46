"""CLI for the holonomic-gate scenario runner."""

import argparse
import asyncio
import os
import sys
from pathlib import Path

import yaml
from pydantic import ValidationError
from safir.logging import LogLevel, Profile

from .campaign import Campaign
from .constants import CONFIG_FILE, ENV_PREFIX
from .exceptions import HqcError, PhysicsError
from .exceptions import ValidationError as ScenarioValidationError
from .models.config import Config


def _add_args(parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
    parser.add_argument(
        "-c",
        "--config",
        "--scenario",
        dest="scenario_file",
        help="Scenario file",
    )
    parser.add_argument(
        "-a",
        "--app-config",
        dest="config_file",
        help="Application configuration file",
    )
    parser.add_argument("-o", "--out", help="Output root directory")
    parser.add_argument("--seed", type=int, help="Seed override")
    parser.add_argument(
        "-j", "--jobs", type=int, help="Runs executed in parallel"
    )
    parser.add_argument(
        "-d", "--debug", action="store_true", help="Enable debug logging"
    )
    return parser


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hqc",
        description="Simulate shortcut-to-adiabatic holonomic gates.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    _add_args(commands.add_parser("run", help="Run a scenario"))
    sweep = _add_args(
        commands.add_parser("sweep", help="Sweep one scenario field")
    )
    sweep.add_argument("--axis", help="Scenario field to vary")
    sweep.add_argument(
        "--values",
        nargs="*",
        help="Values of the axis (numbers or values with units)",
    )
    _add_args(
        commands.add_parser(
            "validate", help="Validate a scenario and run seeded checks"
        )
    )
    return parser


def _postprocess_args_to_config(raw_args: argparse.Namespace) -> Config:
    config: Config | None = None
    override_cf = raw_args.config_file or os.getenv(
        ENV_PREFIX + "CONFIG_FILE", ""
    )
    if not override_cf and CONFIG_FILE.is_file():
        override_cf = str(CONFIG_FILE)
    if override_cf:
        config_file = Path(override_cf)
        try:
            config_obj = yaml.safe_load(config_file.read_text())
            config = Config.model_validate(config_obj)
        except (FileNotFoundError, UnicodeDecodeError, ValidationError):
            config = Config()
    else:
        config = Config()
    override_sf = raw_args.scenario_file or os.getenv(
        ENV_PREFIX + "SCENARIO_FILE", ""
    )
    if override_sf:
        config.scenario_file = Path(override_sf)
    override_out = raw_args.out or os.getenv(ENV_PREFIX + "OUTPUT_ROOT", "")
    if override_out:
        config.output_root = Path(override_out)
    if raw_args.seed is not None:
        config.seed = raw_args.seed
    if raw_args.jobs is not None:
        config.jobs = max(1, raw_args.jobs)
    if raw_args.debug:
        config.logging.log_level = LogLevel.DEBUG
        config.logging.profile = Profile.development
    return config


def _get_executor(args: argparse.Namespace) -> Campaign:
    config = _postprocess_args_to_config(args)
    return Campaign(config=config)


async def _run(campaign: Campaign) -> int:
    await campaign.plan()
    await campaign.run()
    report = await campaign.report()
    if report.failures:
        return report.failures[0].exit_status
    return 0


async def _sweep(campaign: Campaign, args: argparse.Namespace) -> int:
    if args.axis is not None:
        campaign.set_sweep(args.axis, args.values or [])
    elif args.values is not None:
        raise ScenarioValidationError("--values needs --axis")
    await campaign.plan()
    await campaign.run()
    await campaign.report()
    return 0


async def _validate(campaign: Campaign) -> int:
    checks = await campaign.validate()
    await campaign.report()
    if all(check.passed for check in checks):
        return 0
    return PhysicsError.exit_status


def main(argv: list[str] | None = None) -> None:
    """Run the ``hqc`` command."""
    args = _build_parser().parse_args(argv)
    try:
        campaign = _get_executor(args)
        match args.command:
            case "run":
                status = asyncio.run(_run(campaign))
            case "sweep":
                status = asyncio.run(_sweep(campaign, args))
            case _:
                status = asyncio.run(_validate(campaign))
    except HqcError as exc:
        print(f"hqc: {type(exc).__name__}: {exc}", file=sys.stderr)
        sys.exit(exc.exit_status)
    sys.exit(status)
