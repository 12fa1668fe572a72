import argparse
import logging
import sys
from typing import Optional, Sequence

from rich.console import Console
from rich.logging import RichHandler

from cresnet.arch.command import ExportSpecCommand, ListArchsCommand
from cresnet.cost.command import AnalyzeCommand, CompareCommand
from cresnet.errors import CresnetError
from cresnet.train.command import EvalCommand, TrainCommand


def setup_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cresnet")
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Set the logging level",
    )

    # subparserのコマンドでsubpackageのparserを追加
    subparsers = parser.add_subparsers(dest="action", help="Select the action to perform", required=True)
    ListArchsCommand.setup_parser(subparsers.add_parser("list-archs", help="List registered architectures"))
    AnalyzeCommand.setup_parser(subparsers.add_parser("analyze", help="Static params/FLOPs report"))
    CompareCommand.setup_parser(subparsers.add_parser("compare", help="Cost reduction of one network vs another"))
    TrainCommand.setup_parser(subparsers.add_parser("train", help="Train on MNIST/CIFAR"))
    EvalCommand.setup_parser(subparsers.add_parser("eval", help="Evaluate a checkpoint"))
    ExportSpecCommand.setup_parser(subparsers.add_parser("export-spec", help="Write an architecture as YAML"))
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Exit codes: 0 success, 1 internal, 2 usage/input, 3 data/format
    """
    logging.basicConfig(level="NOTSET", format="%(message)s", datefmt="[%X]", handlers=[RichHandler(console=Console(stderr=True))])
    # argparseのusage errorはSystemExit(2)
    args = setup_parser().parse_args(argv)
    logging.getLogger().setLevel(args.log_level)
    try:
        args.func(args)
    except CresnetError as e:
        logging.error(str(e))
        return e.exit_code
    except Exception as e:
        logging.debug("unhandled exception", exc_info=True)
        logging.error(f"internal error: {e!r}")
        return 1
    return 0


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
