import argparse
import logging
import sys
from pathlib import Path
from typing import Tuple

from rich import print
from rich.table import Table

from cresnet.arch.registry import available, registry_get
from cresnet.arch.spec import ArchitectureSpec
from cresnet.arch.specfile import dumps_spec, spec_from_file, spec_to_file
from cresnet.cost.analyzer import census


def resolve_arch(name_or_path: str) -> ArchitectureSpec:
    """
    Registry name, or a path to a YAML spec file
    """
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml") or p.is_file():
        return spec_from_file(p)
    return registry_get(name_or_path)


def parse_input_size(text: str) -> Tuple[int, int]:
    """
    "32x32" -> (32, 32)
    """
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got '{text}'")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"input size must be positive, got '{text}'")
    return (h, w)


def parse_positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


class ListArchsCommand:
    @classmethod
    def main(cls, args: argparse.Namespace) -> None:
        names = available()
        if not args.costs:
            table = Table(title="architectures")
            table.add_column("name")
            table.add_column("status")
            table.add_column("description")
            for name in names:
                spec = registry_get(name)
                table.add_row(name, spec.status.value, spec.description)
            print(table)
            return

        rows = census(names)
        table = Table(title="architectures (32x32, 100 classes)")
        for col in ("name", "status", "conv layers", "jumpers", "solid", "dashed", "params", "flops"):
            table.add_column(col, justify="left" if col in ("name", "status") else "right")
        for r in rows:
            table.add_row(
                r.name,
                r.status,
                str(r.conv_layers),
                str(r.jumpers),
                str(r.solid),
                str(r.dashed),
                f"{r.params / 1e6:.2f}M",
                f"{r.flops / 1e9:.2f}G",
            )
        print(table)

    @classmethod
    def setup_parser(cls, parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
        parser.add_argument(
            "--costs",
            action="store_true",
            help="Also show the layer/jumper census with params and FLOPs",
        )
        parser.set_defaults(func=cls.main)
        return parser


class ExportSpecCommand:
    @classmethod
    def main(cls, args: argparse.Namespace) -> None:
        spec = resolve_arch(args.arch)
        if args.out is None:
            sys.stdout.write(dumps_spec(spec))
            return
        dst = spec_to_file(spec, args.out)
        logging.info(f"exported {spec.name} to {dst}")

    @classmethod
    def setup_parser(cls, parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
        parser.add_argument("arch", type=str, help="Registry name or spec file")
        parser.add_argument(
            "--out",
            default=None,
            help="Write the YAML spec here instead of stdout",
        )
        parser.set_defaults(func=cls.main)
        return parser
