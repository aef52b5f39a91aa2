"""
EdgeNav - Main Entry Point
Command-line front end: dataset generation, detector training and distillation,
mAP evaluation, PPO navigation training, benchmarking and checkpoint tools
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _pin_threads(argv: List[str]) -> None:
    """BLAS pools read these once, when numpy is first imported"""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--threads", type=int)
    known, _ = pre.parse_known_args(argv)
    threads = known.threads or os.getenv("EDGENAV_THREADS")
    if threads:
        for var in THREAD_VARS:
            os.environ[var] = str(threads)


def build_parser() -> argparse.ArgumentParser:
    from handlers import register_all

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="dotenv-format run config (EDGENAV_* keys)")
    common.add_argument("--seed", dest="SEED", type=int, help="master seed")
    common.add_argument(
        "--threads",
        dest="THREADS",
        type=int,
        help="BLAS threads only (OMP/OpenBLAS/MKL); render and loader pools use EDGENAV_DATA_WORKERS",
    )
    common.add_argument("--log-level", dest="LOG_LEVEL", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--no-progress", dest="PROGRESS", action="store_const", const="false", help="hide progress bars")

    parser = argparse.ArgumentParser(prog="edgenav", description=__doc__.strip().splitlines()[1])
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    register_all(subparsers, common)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Optional[str]]:
    """Flags whose dest is a config key, as string overrides"""
    out: Dict[str, Optional[str]] = {}
    for key, value in vars(args).items():
        if not key.isupper() or value is None:
            continue
        out[key] = ",".join(str(v) for v in value) if isinstance(value, (list, tuple)) else str(value)
    return out


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)

    try:
        from config import Config
    except ValueError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE

    from autodiff import set_debug_checks
    from errors import EdgeNavError, UsageError

    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    try:
        cfg = Config.load(args.config, _overrides(args))
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    config_errors = cfg.validate_config()
    if config_errors:
        print("Configuration errors:\n" + "\n".join(f"- {error}" for error in config_errors), file=sys.stderr)
        return EXIT_USAGE

    # Configure logging
    logging.basicConfig(format="%(asctime)s - %(name)s - %(levelname)s - %(message)s", level=getattr(logging, cfg.LOG_LEVEL))
    set_debug_checks(cfg.DEBUG)
    logger.debug(f"{args.command} with seed={cfg.SEED} threads={cfg.THREADS}")

    try:
        return int(args.handler(cfg, args))
    except (UsageError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except EdgeNavError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_FAILURE
    except Exception as e:
        logger.exception(f"Critical error in {args.command}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
