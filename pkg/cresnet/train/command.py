import argparse
import json
import logging
from pathlib import Path
from typing import List

from rich import print

from cresnet.arch.command import resolve_arch
from cresnet.data.augment import AugmentConfig
from cresnet.data.dataset import Dataset, DatasetCatalog, Split, resolve_data_dir
from cresnet.errors import CheckpointError, ConfigError
from cresnet.nn.tensor import Precision, use_precision
from cresnet.train.checkpoint import checkpoint_load
from cresnet.train.config import TrainConfig, TrainPreset
from cresnet.train.log import TrainLog, summarize_runs
from cresnet.train.trainer import apply_subsets, evaluate, train, train_runs


def _load_splits(args: argparse.Namespace) -> tuple[Dataset, Dataset]:
    catalog = DatasetCatalog(resolve_data_dir(args.data_dir))
    return catalog.load(args.dataset, Split.TRAIN), catalog.load(args.dataset, Split.TEST)


def _add_data_args(parser: argparse.ArgumentParser, required: bool = False) -> None:
    parser.add_argument(
        "--dataset",
        choices=DatasetCatalog.names(),
        required=required,
        default=None if required else "mnist",
        help="Dataset name",
    )
    parser.add_argument(
        "--data-dir",
        default=None,
        help="Dataset root (default: $CRESNET_DATA_DIR, then ./data)",
    )


class TrainCommand:
    @classmethod
    def main(cls, args: argparse.Namespace) -> None:
        out_dir = Path(args.out_dir)
        if args.resume is not None:
            ckpt = checkpoint_load(args.resume)
            if ckpt.config is None or ckpt.log is None:
                raise CheckpointError(f"{args.resume}: checkpoint carries no training state to resume")
            cfg = ckpt.config.with_overrides(epochs=args.epochs)
            spec = ckpt.model.spec
        elif args.arch is None:
            raise ConfigError("train needs an architecture or --resume")
        else:
            spec = resolve_arch(args.arch)
            cfg = TrainConfig.from_preset(args.preset).with_overrides(
                seed=args.seed,
                epochs=args.epochs,
                runs=args.runs,
                checkpoint_every=args.checkpoint_every,
            )
        # 副作用の前にすべて検証する
        cfg.validate()
        logging.info(cfg.describe())
        train_set, test_set = _load_splits(args)
        aug_cfg = AugmentConfig.for_dataset(args.dataset, channels=spec.in_channels)

        logs: List[TrainLog] = []
        if args.resume is not None:
            train_set, test_set = apply_subsets(train_set, test_set, cfg)
            run = train(
                ckpt.model,
                train_set,
                test_set,
                cfg,
                run_id=ckpt.log.run_id,
                aug_cfg=aug_cfg,
                optimizer=ckpt.optimizer,
                log=ckpt.log,
                checkpoint_dir=out_dir,
            )
            logs.append(run.log)
        else:
            runs = train_runs(
                spec, train_set, test_set, cfg, classes=train_set.class_count, aug_cfg=aug_cfg, checkpoint_dir=out_dir
            )
            logs += [run.log for run in runs]

        for log in logs:
            stem = out_dir / f"{log.arch}_run{log.run_id}"
            log.dump(f"{stem}.csv")
            log.dump(f"{stem}.json")

        last_k = min(cfg.last_k, min(log.epochs_completed for log in logs))
        if last_k < cfg.last_k:
            logging.warning(f"only {last_k} epochs available, summarizing the last {last_k} instead of {cfg.last_k}")
        summary = summarize_runs(logs, last_k=last_k)
        out_dir.mkdir(parents=True, exist_ok=True)
        summary_path = out_dir / f"{spec.name}_summary.json"
        with open(summary_path, "w", encoding="utf-8") as f:
            doc = {"arch": spec.name, "dataset": args.dataset, "config": cfg.to_dict(), "summary": summary.to_dict()}
            json.dump(doc, f, indent=2)
            f.write("\n")
        print(f"{spec.name} on {args.dataset}: test error {summary}")

    @classmethod
    def setup_parser(cls, parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
        parser.add_argument("arch", type=str, nargs="?", default=None, help="Registry name or spec file")
        _add_data_args(parser)
        parser.add_argument(
            "--preset",
            default=TrainPreset.DESK.value,
            choices=[p.value for p in TrainPreset],
            help="paper: 500 epochs x 3 runs; desk: 5 epochs on a 5,000/1,000 subset",
        )
        parser.add_argument("--seed", type=int, default=None, help="Override the preset seed")
        parser.add_argument("--epochs", type=int, default=None, help="Override the preset epochs")
        parser.add_argument("--runs", type=int, default=None, help="Override the preset run count")
        parser.add_argument(
            "--checkpoint-every",
            type=int,
            default=None,
            help="Save a checkpoint every N epochs (the final epoch is always saved)",
        )
        parser.add_argument("--resume", default=None, help="Continue from a checkpoint file")
        parser.add_argument(
            "--out-dir",
            default="dist_train",
            help="Directory for logs, summaries and checkpoints",
        )
        parser.set_defaults(func=cls.main)
        return parser


class EvalCommand:
    @classmethod
    def main(cls, args: argparse.Namespace) -> None:
        ckpt = checkpoint_load(args.checkpoint)
        catalog = DatasetCatalog(resolve_data_dir(args.data_dir))
        test_set = catalog.load(args.dataset, Split.TEST)
        # 学習時と同じテストサブセットで評価する
        if ckpt.config is not None and ckpt.config.test_subset is not None and not args.full_test_set:
            test_set = test_set.subset(ckpt.config.test_subset, seed=ckpt.config.seed)
        aug_cfg = AugmentConfig.for_dataset(args.dataset, channels=ckpt.model.spec.in_channels)
        with use_precision(Precision(ckpt.model.fc_weight.data.dtype.name)):
            result = evaluate(ckpt.model, test_set, aug_cfg)
        logging.info(f"{ckpt.model.name}: {result.errors}/{result.total} misclassified")
        print(f"{result.error_rate:.4f}")

    @classmethod
    def setup_parser(cls, parser: argparse.ArgumentParser) -> argparse.ArgumentParser:
        parser.add_argument("checkpoint", type=str, help="Checkpoint file (.npz)")
        _add_data_args(parser, required=True)
        parser.add_argument(
            "--full-test-set",
            action="store_true",
            help="Ignore the test subset recorded in the checkpoint",
        )
        parser.set_defaults(func=cls.main)
        return parser
