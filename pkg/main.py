#!/usr/bin/env python3
"""
FedAlign - Federated Learning with Feedback Alignment
Main entry point for training, paired comparisons and numerical checks
"""

import argparse
import sys
from typing import List, Optional

from core.commands import (EXIT_CHECK_FAILED, EXIT_CONFIG_ERROR, EXIT_OK, cmd_boundcheck, cmd_compare,
                           cmd_gradcheck, cmd_partition, cmd_train)
from core.errors import CheckFailedError, ConfigError, FedAlignError
from core.experiment_loader import list_available_experiments
from core.performance_logger import log_error, log_warn, logger, print_run_summary

EXIT_INTERRUPTED = 130


def _add_run_flags(parser: argparse.ArgumentParser, workers: bool = True) -> None:
    parser.add_argument('--config', required=True,
                        help='settings.py / .json path or experiment name under experiments/')
    parser.add_argument('--seed', type=int, help='Override the configured seed (FEDALIGN_SEED)')
    parser.add_argument('--output-dir', help='Override the output directory (FEDALIGN_OUTPUT_DIR)')
    if workers:
        parser.add_argument('--workers', type=int, help='Client training threads (default: CPU count)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='main.py',
        description='Federated learning simulator with feedback alignment',
        epilog='Outputs: rounds.jsonl (one JSON object per round), metrics.csv (round, lr, clients, '
               'fa_layers, drift, alignment, eval_accuracy, ...), bound_report.csv (method, round, '
               'client pair, layer, step, lhs, rhs, per-term values, slack), model.json, manifest.json'
    )
    parser.add_argument('--quiet', action='store_true', help='Only print warnings and errors')
    parser.add_argument('--verbose', action='store_true', help='Print debug messages')
    parser.add_argument('--list', action='store_true', help='List available experiments')
    sub = parser.add_subparsers(dest='command')

    train = sub.add_parser('train', help='Run one federated training configuration')
    _add_run_flags(train)

    compare = sub.add_parser('compare', help='Paired BP vs FLFA runs (plus ablations) over seeds')
    _add_run_flags(compare)

    gradcheck = sub.add_parser('gradcheck', help='Backprop vs finite differences on random networks')
    gradcheck.add_argument('--seed', type=int, default=0, help='Seed for the random networks')
    gradcheck.add_argument('--cases', type=int, default=50, help='Number of random networks')
    gradcheck.add_argument('--output-dir', help='Also write gradcheck.json and gradcheck.txt here')

    boundcheck = sub.add_parser('boundcheck', help='Verify the per-step drift bound in trace mode')
    _add_run_flags(boundcheck)

    partition = sub.add_parser('partition', help='Dump the client partition as JSON')
    _add_run_flags(partition, workers=False)
    return parser


def run_command(args: argparse.Namespace) -> int:
    """Dispatch a parsed command line; exceptions propagate to main()."""
    if args.command == 'train':
        return cmd_train(args.config, args.seed, args.output_dir, args.workers)
    if args.command == 'compare':
        return cmd_compare(args.config, args.seed, args.output_dir, args.workers)
    if args.command == 'gradcheck':
        return cmd_gradcheck(args.seed, args.cases, args.output_dir)
    if args.command == 'boundcheck':
        return cmd_boundcheck(args.config, args.seed, args.output_dir, args.workers)
    if args.command == 'partition':
        return cmd_partition(args.config, args.seed, args.output_dir)
    raise ValueError(f"unknown command {args.command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = build_parser()
    args = parser.parse_args(argv)
    logger.reset()
    if args.quiet:
        logger.set_quiet_mode(True)
    elif args.verbose:
        logger.set_verbose_mode(True)

    if args.list:
        experiments = list_available_experiments()
        print("\n📋 Available experiments:")
        for name in experiments:
            print(f"  • {name}")
        if not experiments:
            print("  No experiments found")
        return EXIT_OK

    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG_ERROR

    try:
        code = run_command(args)
    except ConfigError as e:
        log_error("Main", f"Configuration error{' in ' + e.source if e.source else ''}:")
        for error in e.errors:
            print(f"  - {error}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except CheckFailedError as e:
        log_error("Main", str(e))
        print_run_summary()
        return EXIT_CHECK_FAILED
    except FedAlignError as e:
        log_error("Main", f"{type(e).__name__}: {e}")
        return EXIT_CHECK_FAILED
    except MemoryError as e:
        log_error("Main", f"Out of memory: {e}")
        print("⚠️ Try fewer workers or disable metrics.record_updates", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except PermissionError as e:
        log_error("Main", f"Permission denied: {e}")
        print("⚠️ Check file permissions in the output directory", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except (OSError, IOError) as e:
        log_error("Main", f"File system error: {e}")
        return EXIT_CHECK_FAILED
    except KeyboardInterrupt:
        log_warn("Main", "Interrupted by user")
        return EXIT_INTERRUPTED

    print_run_summary()
    return code


if __name__ == "__main__":
    sys.exit(main())
