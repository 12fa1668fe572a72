import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cresnet.arch.model import build
from cresnet.arch.registry import registry_get
from cresnet.arch.spec import narrowed
from cresnet.data.augment import AugmentConfig
from cresnet.data.dataset import DatasetCatalog, Split
from cresnet.errors import NonFiniteLossError
from cresnet.nn.ops import BnMode
from cresnet.train.checkpoint import checkpoint_load
from cresnet.train.config import TrainConfig
from cresnet.train.log import summarize_runs
from cresnet.train.trainer import apply_subsets, checkpoint_name, evaluate, lr_at, train, train_runs


@pytest.mark.parametrize(
    "epoch, lr",
    [(0, 0.01), (149, 0.01), (150, 0.001), (299, 0.001), (300, 1e-4), (449, 1e-4), (450, 1e-5), (499, 1e-5)],
)
def test_lr_schedule(epoch: int, lr: float):
    assert lr_at(epoch, TrainConfig.preset_paper()) == pytest.approx(lr)


def test_checkpoint_name():
    assert checkpoint_name("cresnet18_a", 2, 15) == "cresnet18_a_run2_epoch0015.npz"


def test_apply_subsets(toy_sets):
    train_set, test_set = toy_sets
    cfg = TrainConfig(train_subset=10, test_subset=100)
    a, b = apply_subsets(train_set, test_set, cfg)
    assert (len(a), len(b)) == (10, 8)


def test_evaluate_restores_mode(toy_sets, toy_spec, toy_aug):
    _, test_set = toy_sets
    model = build(toy_spec)
    result = evaluate(model, test_set, toy_aug, batch_size=3)
    assert result.total == 8
    assert 0 <= result.errors <= 8
    assert model.mode == BnMode.TRAIN
    model.eval()
    evaluate(model, test_set, toy_aug)
    assert model.mode == BnMode.EVAL


def test_train_records_every_epoch(toy_sets, toy_spec, toy_aug, toy_cfg):
    train_set, test_set = toy_sets
    run = train(build(toy_spec, seed=0), train_set, test_set, toy_cfg, aug_cfg=toy_aug)
    log = run.log
    assert log.epochs_completed == 3
    assert [r.epoch for r in log.records] == [0, 1, 2]
    assert all(np.isfinite(r.train_loss) for r in log.records)
    assert all(0.0 <= r.test_error <= 1.0 for r in log.records)
    assert log.config["batch_size"] == 8


def test_training_is_deterministic(toy_sets, toy_spec, toy_aug, toy_cfg):
    train_set, test_set = toy_sets
    a = train(build(toy_spec, seed=1), train_set, test_set, toy_cfg, aug_cfg=toy_aug)
    b = train(build(toy_spec, seed=1), train_set, test_set, toy_cfg, aug_cfg=toy_aug)
    assert a.log.series() == b.log.series()
    sa, sb = a.model.state_arrays(), b.model.state_arrays()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_resume_matches_uninterrupted_run(tmp_path: Path, toy_sets, toy_spec, toy_aug, toy_cfg):
    train_set, test_set = toy_sets
    cfg = replace(toy_cfg, checkpoint_every=1)
    full = train(build(toy_spec, seed=1), train_set, test_set, cfg, aug_cfg=toy_aug, checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.glob("*.npz")) == [
        checkpoint_name(toy_spec.name, 0, e) for e in (1, 2, 3)
    ]

    ckpt = checkpoint_load(tmp_path / checkpoint_name(toy_spec.name, 0, 1))
    assert ckpt.log is not None and ckpt.log.epochs_completed == 1
    resumed = train(
        ckpt.model, train_set, test_set, cfg, aug_cfg=toy_aug, optimizer=ckpt.optimizer, log=ckpt.log
    )
    assert resumed.log.epochs_completed == 3
    assert resumed.log.series() == full.log.series()
    sa, sb = full.model.state_arrays(), resumed.model.state_arrays()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_train_runs_use_separate_seeds(toy_sets, toy_spec, toy_aug, toy_cfg):
    train_set, test_set = toy_sets
    cfg = replace(toy_cfg, epochs=1, runs=2)
    runs = train_runs(toy_spec, train_set, test_set, cfg, aug_cfg=toy_aug)
    assert [r.log.run_id for r in runs] == [0, 1]
    w0, w1 = (r.model.fc_weight.data for r in runs)
    assert not np.array_equal(w0, w1)


def test_non_finite_loss_names_layer(toy_sets, toy_spec, toy_aug, toy_cfg):
    train_set, test_set = toy_sets
    model = build(toy_spec)
    model.blocks[0].layers[0].conv.data[...] = np.nan
    with pytest.raises(NonFiniteLossError) as e:
        train(model, train_set, test_set, toy_cfg, aug_cfg=toy_aug)
    assert (e.value.epoch, e.value.batch) == (0, 0)
    assert e.value.layer == "stages.0.0.layer1"




def test_training_learns_toy_problem(toy_learn_sets):
    train_set, test_set = toy_learn_sets
    classes = train_set.class_count
    spec = replace(narrowed(registry_get("cresnet15_a1"), 16), input_size=(8, 8), classes=classes)
    # 平行移動なし: 明るさだけがクラスを決める
    aug = AugmentConfig(resize_to=(8, 8), pad_to=(8, 8), crop=(8, 8))
    cfg = TrainConfig(epochs=6, batch_size=32, seed=3, last_k=1)
    log = train(build(spec, seed=0), train_set, test_set, cfg, aug_cfg=aug).log
    chance = 1.0 - 1.0 / classes
    assert log.records[-1].train_loss < math.log(classes)
    assert log.records[-1].train_loss < log.records[0].train_loss
    assert min(r.test_error for r in log.records) < chance - 0.2


DESK_CASES = ["cresnet15_a1", "resnet18_ft"]


@pytest.mark.slow
@pytest.mark.data
@pytest.mark.parametrize("arch", DESK_CASES)
def test_desk_run_on_mnist(arch: str, tmp_path: Path):
    catalog = DatasetCatalog()
    if not catalog.available("mnist"):
        pytest.skip(f"mnist not found under {catalog.data_dir}")
    spec = registry_get(arch)
    cfg = TrainConfig.preset_desk()
    runs = train_runs(
        spec,
        catalog.load("mnist", Split.TRAIN),
        catalog.load("mnist", Split.TEST),
        cfg,
        classes=10,
        aug_cfg=AugmentConfig.for_dataset("mnist", channels=3),
        checkpoint_dir=tmp_path,
    )
    log = runs[0].log
    assert log.epochs_completed == cfg.epochs
    assert log.records[-1].test_error < 0.05
    assert summarize_runs([r.log for r in runs], last_k=1).mean < 0.05
    assert (tmp_path / checkpoint_name(spec.name, 0, cfg.epochs)).exists()
