import argparse
import json
import logging
import sys

from rich import print

from cresnet.arch.command import parse_input_size, parse_positive_int, resolve_arch
from cresnet.arch.spec import with_imagenet_stem
from cresnet.cost.analyzer import FlopConvention, analyze, compare


def _add_shape_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--input-size",
        type=parse_input_size,
        default=None,
        help="Input resolution HxW (default: the spec's own, 32x32 for the registry)",
    )
    parser.add_argument(
        "--classes",
        type=parse_positive_int,
        default=None,
        help="Classifier width (default: the spec's own, 100 for the registry)",
    )
    parser.add_argument(
        "--flop-convention",
        choices=[c.value for c in FlopConvention],
        default=FlopConvention.MAC.value,
        help="mac: conv/fc multiply-accumulates only; mac+bn: also 2 per BN output element",
    )


def _write(text: str, out: str | None) -> None:
    # 機械可読な出力はrichを通さない
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8") as f:
        f.write(text)
    logging.info(f"written: {out}")


class AnalyzeCommand:
    @classmethod
    def main(cls, args: argparse.Namespace) -> None:
        spec = resolve_arch(args.arch)
        if args.stem == "imagenet":
            spec = with_imagenet_stem(spec)
        report = analyze(spec, args.input_size, args.classes, FlopConvention(args.flop_convention))
        logging.debug(report.describe())

        if args.format == "text":
            if args.out is None:
                print(report.describe())
            elif args.out.endswith((".json", ".csv")):
                report.dump(args.out)
            else:
                _write(report.describe(), args.out)
        elif args.out is not None:
            report.dump(args.out, args.format)
        else:
            _write(report.to_json() if args.format == "json" else report.to_csv(), None)

    @classmethod
    def setup_parser(cls, parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
        parser.add_argument("arch", type=str, help="Registry name or spec file")
        _add_shape_args(parser)
        parser.add_argument(
            "--format",
            default="text",
            choices=["text", "json", "csv"],
            help="Report format (text is a human summary)",
        )
        parser.add_argument(
            "--out",
            default=None,
            help="Write the report to this file (format from --format or the extension)",
        )
        parser.add_argument(
            "--stem",
            default="finetuned",
            choices=["finetuned", "imagenet"],
            help="imagenet analyses the 224x224 variant with a 7x7 conv + max pool stem",
        )
        parser.set_defaults(func=cls.main)
        return parser


class CompareCommand:
    @classmethod
    def main(cls, args: argparse.Namespace) -> None:
        subject = resolve_arch(args.subject)
        baseline = resolve_arch(args.baseline)
        comparison = compare(
            subject, baseline, args.input_size, args.classes, convention=FlopConvention(args.flop_convention)
        )
        if args.format == "json":
            _write(json.dumps(comparison.to_dict(), indent=2) + "\n", args.out)
        else:
            text = comparison.describe()
            if args.out is not None:
                _write(text, args.out)
            else:
                print(text)

    @classmethod
    def setup_parser(cls, parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
        parser.add_argument("subject", type=str, help="Registry name or spec file")
        parser.add_argument("baseline", type=str, help="Registry name or spec file")
        _add_shape_args(parser)
        parser.add_argument(
            "--format",
            default="text",
            choices=["text", "json"],
            help="Output format",
        )
        parser.add_argument("--out", default=None, help="Write the comparison to this file")
        parser.set_defaults(func=cls.main)
        return parser
