#!/usr/bin/env python3
"""
foliashadow - foliated shadowing and stability experiments on tori
Main command-line entry point
"""

import argparse
import sys
from typing import List, Optional

# Import application modules
from app import __version__
from app.api import cr_set, expansivity_scan, quotient, semiconj, shadow
from app.core.config import get_settings
from app.core.errors import ConfigError
from app.services.runner import ScenarioRunner, default_steps
from app.services.scenarios import list_scenarios, resolve_config

# Subcommand handler modules, keyed by step name
HANDLERS = {
    cr_set.STEP: cr_set,
    shadow.STEP: shadow,
    semiconj.STEP: semiconj,
    expansivity_scan.STEP: expansivity_scan,
    quotient.STEP: quotient,
}


def _u64(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {value}")
    return seed


def _positive(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return n


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (TOML, or JSON by .json suffix)")
    common.add_argument("--scenario", help="built-in scenario name (see 'foliashadow scenarios')")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=_u64, help="seed for randomized sampling")
    common.add_argument("--threads", type=_positive, help="worker count")

    parser = argparse.ArgumentParser(prog="foliashadow", description="Foliated shadowing and stability on tori")
    parser.add_argument("--version", action="version", version=f"foliashadow {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in HANDLERS.values():
        module.register(subparsers, [common])
    subparsers.add_parser("all", parents=[common], help="run every step the scenario lists")
    subparsers.add_parser("scenarios", help="list built-in scenarios")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns 0 when every check passed, 1 on a failed check, 2 on a config error"""
    args = build_parser().parse_args(argv)

    settings = get_settings()
    if settings.is_development():
        settings.print_status()

    if args.command == "scenarios":
        for name, description in list_scenarios():
            print(f"{name:<22}{description}")
        return 0

    try:
        config = resolve_config(args.config, args.scenario)
        runner = ScenarioRunner(config, args.out, args.seed, args.threads)

        # Set global runner for the handler modules
        for module in HANDLERS.values():
            module.runner = runner

        print(f"🚀 Starting foliashadow {args.command} for scenario '{runner.config.name}'")
        print(f"   seed: {runner.seed}")
        print(f"   threads: {runner.threads}")
        print(f"   out_dir: {runner.out_dir}")

        steps = default_steps(runner.config) if args.command == "all" else [args.command]
        if not steps:
            raise ConfigError(f"scenario '{runner.config.name}' lists no steps to run")
        for step in steps:
            HANDLERS[step].handle()
        manifest = runner.finish()
    except ConfigError as e:
        print(f"❌ Configuration error: {str(e)}", file=sys.stderr)
        return 2

    if manifest.passed:
        print("✅ All checks passed")
        return 0
    failed = [s.step for s in manifest.steps if s.status != "passed"]
    print(f"❌ Checks failed: {', '.join(failed)}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
