import logging
import math
import time
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from cresnet.arch.model import Model, build
from cresnet.arch.spec import ArchitectureSpec
from cresnet.data.augment import AugmentConfig, augment, batches, normalize_only
from cresnet.data.dataset import Dataset
from cresnet.errors import NonFiniteLossError
from cresnet.nn.ops import BnMode, softmax_cross_entropy
from cresnet.nn.optim import Sgd, SgdConfig
from cresnet.nn.tensor import backward, no_grad, use_precision
from cresnet.train.checkpoint import checkpoint_save
from cresnet.train.config import TrainConfig
from cresnet.train.log import EpochRecord, EvalResult, TrainLog

EVAL_BATCH_SIZE = 256


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """
    lr0 * lr_factor ** floor(epoch / lr_decay_every)
    """
    assert epoch >= 0, f"{epoch=}"
    return cfg.lr0 * cfg.lr_factor ** (epoch // cfg.lr_decay_every)


def evaluate(
    model: Model,
    dataset: Dataset,
    aug_cfg: Optional[AugmentConfig] = None,
    batch_size: int = EVAL_BATCH_SIZE,
) -> EvalResult:
    """
    Top-1 error in eval mode with normalization only. The model's mode is restored afterwards.
    """
    aug_cfg = aug_cfg if aug_cfg is not None else AugmentConfig.for_dataset(dataset.name)
    prev = model.mode
    model.eval()
    errors = 0
    try:
        with no_grad():
            for x, labels in batches(dataset, batch_size, transform=partial(normalize_only, cfg=aug_cfg)):
                pred = np.argmax(model(x).data, axis=1)
                errors += int(np.count_nonzero(pred != labels))
    finally:
        if prev == BnMode.TRAIN:
            model.train()
        else:
            model.eval()
    return EvalResult(errors=errors, total=len(dataset))


@dataclass
class TrainRun:
    log: TrainLog
    model: Model
    optimizer: Sgd


def _epoch_seeds(cfg: TrainConfig, run_id: int, epoch: int) -> tuple[list[int], list[int]]:
    # エポック単位で独立したストリーム。再開時に過去エポックを再生しなくてよい
    return [cfg.seed, run_id, epoch, 0], [cfg.seed, run_id, epoch, 1]


def _train_epoch(
    model: Model,
    optimizer: Sgd,
    train_set: Dataset,
    cfg: TrainConfig,
    run_id: int,
    epoch: int,
    aug_cfg: AugmentConfig,
) -> float:
    """
    One pass over `train_set`; returns the mean training loss
    """
    shuffle_seed, aug_seed = _epoch_seeds(cfg, run_id, epoch)
    rng = np.random.default_rng(aug_seed)
    model.train()
    loss_sum = 0.0
    seen = 0
    transform = partial(augment, cfg=aug_cfg, rng=rng)
    for i, (x, labels) in enumerate(batches(train_set, cfg.batch_size, shuffle_seed=shuffle_seed, transform=transform)):
        optimizer.zero_grad()
        loss = softmax_cross_entropy(model(x), labels)
        value = loss.item()
        if not math.isfinite(value):
            with no_grad():
                layer = model.find_first_nonfinite(x)
            raise NonFiniteLossError(epoch, i, layer)
        backward(loss)
        optimizer.step()
        loss_sum += value * len(labels)
        seen += len(labels)
    return loss_sum / max(seen, 1)


def train(
    model: Model,
    train_set: Dataset,
    test_set: Dataset,
    cfg: TrainConfig,
    run_id: int = 0,
    aug_cfg: Optional[AugmentConfig] = None,
    optimizer: Optional[Sgd] = None,
    log: Optional[TrainLog] = None,
    checkpoint_dir: Optional[str | Path] = None,
) -> TrainRun:
    """
    SGD with momentum and weight decay, stepwise lr schedule, evaluation after every epoch.

    Passing the optimizer and log restored from a checkpoint resumes at `log.epochs_completed`.
    """
    cfg.validate()
    aug_cfg = aug_cfg if aug_cfg is not None else AugmentConfig.for_dataset(train_set.name)
    if optimizer is None:
        optimizer = Sgd(
            model.parameters(), SgdConfig(lr=cfg.lr0, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
        )
    if log is None:
        log = TrainLog(arch=model.name, run_id=run_id, config=cfg.to_dict())
    start_epoch = log.epochs_completed
    if start_epoch:
        logging.info(f"resuming {model.name} run {run_id} at epoch {start_epoch}")

    for epoch in range(start_epoch, cfg.epochs):
        began = time.perf_counter()
        lr = lr_at(epoch, cfg)
        optimizer.lr = lr
        with use_precision(cfg.precision):
            train_loss = _train_epoch(model, optimizer, train_set, cfg, run_id, epoch, aug_cfg)
            result = evaluate(model, test_set, aug_cfg)
        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_loss=train_loss,
            test_error=result.error_rate,
            seconds=time.perf_counter() - began,
        )
        log.records.append(record)
        logging.info(
            f"[{model.name} run {run_id}] epoch {epoch + 1}/{cfg.epochs} "
            f"lr={lr:g} loss={record.train_loss:.4f} test_error={record.test_error:.4f} ({record.seconds:.1f}s)"
        )

        done = epoch + 1
        if checkpoint_dir is not None and (
            done == cfg.epochs or (cfg.checkpoint_every and done % cfg.checkpoint_every == 0)
        ):
            checkpoint_save(
                model,
                optimizer,
                Path(checkpoint_dir) / checkpoint_name(model.name, run_id, done),
                epoch=done,
                seed=cfg.seed + run_id,
                config=cfg,
                log=log,
            )

    return TrainRun(log=log, model=model, optimizer=optimizer)


def apply_subsets(train_set: Dataset, test_set: Dataset, cfg: TrainConfig) -> Tuple[Dataset, Dataset]:
    if cfg.train_subset is not None:
        train_set = train_set.subset(cfg.train_subset, seed=cfg.seed)
    if cfg.test_subset is not None:
        test_set = test_set.subset(cfg.test_subset, seed=cfg.seed)
    return train_set, test_set


def checkpoint_name(arch: str, run_id: int, epoch: int) -> str:
    return f"{arch}_run{run_id}_epoch{epoch:04d}.npz"


def train_runs(
    spec: ArchitectureSpec,
    train_set: Dataset,
    test_set: Dataset,
    cfg: TrainConfig,
    classes: Optional[int] = None,
    aug_cfg: Optional[AugmentConfig] = None,
    checkpoint_dir: Optional[str | Path] = None,
) -> List[TrainRun]:
    """
    `cfg.runs` independent runs; run i builds its model with seed `cfg.seed + i`
    """
    train_set, test_set = apply_subsets(train_set, test_set, cfg)
    runs = []
    with use_precision(cfg.precision):
        for run_id in range(cfg.runs):
            model = build(spec, classes=classes, seed=cfg.seed + run_id)
            runs.append(
                train(model, train_set, test_set, cfg, run_id=run_id, aug_cfg=aug_cfg, checkpoint_dir=checkpoint_dir)
            )
    return runs
