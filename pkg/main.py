#!/usr/bin/env python3
"""
satdn - Main Entry Point

Reconstructs a surface mesh and a DSM from RPC satellite views with a neural SDF
supervised by fused monocular depth and normal-consistency priors.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from config_loader import LoggingSection, PipelineConfig, validate_config
from core.errors import ConfigError, DatasetError, SatDNError
from pipeline import PipelineRunner, run_job


EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILURE = 2

COMMANDS = ['synth', 'fuse-depth', 'train', 'extract', 'evaluate', 'pipeline', 'ablate']


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that reports usage errors as exceptions instead of exiting with 2."""

    def error(self, message):
        raise UsageError(message)


def setup_logging(config: LoggingSection, verbose: bool = False):
    """
    Setup logging configuration.

    Args:
        config: Logging section (level, optional file)
        verbose: Force DEBUG
    """
    log_level = 'DEBUG' if verbose else config.level
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if config.file:
        log_path = Path(config.file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_path, encoding='utf-8'))

    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging initialized: level={log_level}, file={config.file}")


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command line arguments.

    Raises:
        UsageError: On unknown commands or flags
    """
    parser = ArgumentParser(
        prog='satdn',
        description='satdn - implicit surface reconstruction from RPC satellite views',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Generate the bundled synthetic scene and run everything on it
  python main.py pipeline --config config.yaml --seed 7

  # Individual stages
  python main.py synth
  python main.py fuse-depth
  python main.py train --checkpoint runs/tiny/checkpoints/iter_005000.ckpt
  python main.py extract --fill-nodata
  python main.py evaluate --pred runs/tiny/dsm.asc --truth data/tiny/gt_dsm.asc

Exit status:
  0 success, 1 invalid input or configuration, 2 runtime failure
        """
    )
    parser.add_argument('command', choices=COMMANDS, help='Pipeline stage to run')
    parser.add_argument('--config', type=str, default=None,
                        help='Path to configuration file (default: built-in defaults)')
    parser.add_argument('--seed', type=int, default=None, help='Override the configured seed')
    parser.add_argument('--threads', type=int, default=None, help='Worker threads (default: all processors)')
    parser.add_argument('--checkpoint', type=Path, default=None,
                        help='train: resume from this checkpoint; extract: checkpoint to extract')
    parser.add_argument('--dump-rays', type=int, nargs='?', const=0, default=None, metavar='ITER',
                        help='Write per-sample values of the given iteration (default 0) to CSV')
    parser.add_argument('--fill-nodata', action='store_true', default=None,
                        help='Fill empty DSM cells by inverse-distance interpolation')
    parser.add_argument('--pred', type=Path, default=None, help='evaluate: predicted DSM (.asc)')
    parser.add_argument('--truth', type=Path, default=None, help='evaluate: reference DSM (.asc)')
    parser.add_argument('--pred-mesh', type=Path, default=None, help='evaluate: predicted mesh')
    parser.add_argument('--truth-mesh', type=Path, default=None, help='evaluate: reference mesh')
    parser.add_argument('-v', '--verbose', action='store_true', help='Debug logging')
    parser.add_argument('--version', action='version', version='satdn v1.0.0')
    return parser.parse_args(argv)


def run_command(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        int: 0 on success, 1 on validation errors, 2 on runtime failures
    """
    logging.basicConfig(
        level=logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )
    logger = logging.getLogger(__name__)

    try:
        args = parse_arguments(argv)
        if args.config is not None and not Path(args.config).exists():
            raise ConfigError('', f"Configuration file not found: {args.config}")
        overrides = {'seed': args.seed, 'threads': args.threads}
        if args.fill_nodata:
            overrides['extraction.fill_nodata'] = True
        config: PipelineConfig = validate_config(args.config, overrides)
    except UsageError as e:
        logger.error(f"Invalid arguments: {e}")
        return EXIT_INVALID
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_INVALID

    setup_logging(config.logging, args.verbose)
    logger.info(f"satdn {args.command} (config: {args.config or 'defaults'}, seed {config.seed})")

    try:
        runner = PipelineRunner(config)
        run_job(
            runner, args.command,
            checkpoint=args.checkpoint, dump_rays=args.dump_rays, fill_nodata=args.fill_nodata,
            pred=args.pred, truth=args.truth, pred_mesh=args.pred_mesh, truth_mesh=args.truth_mesh,
        )
    except (ConfigError, DatasetError, FileNotFoundError) as e:
        logger.error(f"{args.command}: {e}")
        return EXIT_INVALID
    except SatDNError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_FAILURE
    except Exception as e:
        logger.error(f"Fatal error: {e}", exc_info=True)
        return EXIT_FAILURE

    logger.info(f"{args.command} completed successfully")
    return EXIT_OK


def main():
    """Main function."""
    sys.exit(run_command())


if __name__ == '__main__':
    main()
