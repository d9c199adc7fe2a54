#!/usr/bin/env python3
"""
Overlap Registration CLI

Generate synthetic partial-overlap suites, run registration matrices with and
without expected overlap estimation, time the weight computation and dump
per-point overlap weights.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .bench import (
    EXIT_CONFIG_ERROR,
    EXIT_OK,
    ConfigurationError,
    ExperimentConfig,
    cmd_register,
    cmd_synth,
    cmd_timing,
    cmd_weights,
)
from .errors import OverlapRegError
from .log import configure_logging

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='Experiment config JSON (default: built-in synthetic experiment)')
    common.add_argument('--output', help='Results JSON path (default: output from config, results.json)')
    common.add_argument('--threads', type=int, help='Worker threads (default: OVERLAP_REG_THREADS or 1)')
    common.add_argument('--seed', type=int, help='Override the config seed')
    common.add_argument(
        '--single-thread-determinism',
        action='store_true',
        help='Run everything on one thread so repeated runs are byte-identical'
    )
    common.add_argument('--log-level', help='Log level (default: OVERLAP_REG_LOG or WARNING)')

    parser = argparse.ArgumentParser(
        prog='overlap-reg',
        description='Point cloud registration benchmarks with expected overlap estimation',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate the five-view synthetic suite
  %(prog)s synth --output suite.json

  # Run every algorithm with and without EOE
  %(prog)s register --config experiment.json --output results.json

  # Weight computation time against cloud size
  %(prog)s timing --output timing.json

  # Dump per-point weights for frames 1 and 2, with a preview image
  %(prog)s weights --config experiment.json --pair 1 2 --preview omega.png
        """
    )
    subparsers = parser.add_subparsers(dest='command')

    subparsers.add_parser('synth', parents=[common], help='Write a synthetic partial-overlap suite')
    subparsers.add_parser('register', parents=[common], help='Run the algorithm x EOE matrix')
    subparsers.add_parser('timing', parents=[common], help='Time the overlap weight computation')
    weights = subparsers.add_parser('weights', parents=[common], help='Dump final per-point overlap weights')
    weights.add_argument('--pair', type=int, nargs=2, metavar=('TARGET', 'SOURCE'),
                         help='Frame indices (default: weights.pair from config)')
    weights.add_argument('--preview', help='Write a top-down PNG of the weights')
    subparsers.add_parser('validate-config', parents=[common], help='Check a config and print its effective form')
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    """Load the config and apply command-line overrides."""
    config = ExperimentConfig.load(Path(args.config) if args.config else None)
    if args.seed is not None:
        config.seed = args.seed
    if args.threads is not None:
        config.threads = args.threads
    if args.single_thread_determinism:
        config.threads = 1
    config.validate()
    return config


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG_ERROR

    try:
        configure_logging(args.log_level)
    except ValueError as e:
        print(f'❌ {e}')
        return EXIT_CONFIG_ERROR

    try:
        config = load_config(args)
        output = Path(args.output or config.output)

        if args.command == 'validate-config':
            print(f"✅ Configuration valid: {len(config.algorithms)} algorithm(s), "
                  f"EOE mode '{config.eoe['mode']}', init '{config.init}'")
            print(json.dumps(config.to_dict(), indent=2))
            return EXIT_OK
        if args.command == 'synth':
            return cmd_synth(config, output)
        if args.command == 'register':
            return cmd_register(config, output, single_thread=args.single_thread_determinism)
        if args.command == 'timing':
            return cmd_timing(config, output)
        return cmd_weights(config, output, pair=args.pair,
                           preview=Path(args.preview) if args.preview else None)

    except ConfigurationError as e:
        print(f'❌ Configuration error: {e}')
        return EXIT_CONFIG_ERROR
    except (OverlapRegError, OSError) as e:
        logger.debug('command %s failed', args.command, exc_info=True)
        print(f'❌ {args.command} failed: {e}')
        return EXIT_CONFIG_ERROR


if __name__ == '__main__':
    sys.exit(main())
