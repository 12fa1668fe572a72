from dataclasses import replace
from typing import Tuple

import numpy as np
import pytest

from cresnet.arch.registry import registry_get
from cresnet.arch.spec import ArchitectureSpec, narrowed
from cresnet.data.augment import AugmentConfig
from cresnet.data.dataset import Dataset, Split
from cresnet.train.config import TrainConfig

TOY_CLASSES = 4


def toy_dataset(n: int, split: Split, seed: int) -> Dataset:
    # クラスごとに明るさの違う 3x8x8 画像
    rng = np.random.default_rng(seed)
    labels = np.arange(n, dtype=np.int64) % TOY_CLASSES
    base = (labels * 60 + 20)[:, None, None, None]
    noise = rng.integers(-15, 16, size=(n, 3, 8, 8))
    images = np.clip(base + noise, 0, 255).astype(np.uint8)
    return Dataset(name="toy", split=split, images=images, labels=labels, class_count=TOY_CLASSES)


@pytest.fixture
def toy_sets() -> Tuple[Dataset, Dataset]:
    return toy_dataset(24, Split.TRAIN, 0), toy_dataset(8, Split.TEST, 1)


@pytest.fixture
def toy_spec() -> ArchitectureSpec:
    return replace(narrowed(registry_get("cresnet18_a"), 16), input_size=(8, 8), classes=TOY_CLASSES)


@pytest.fixture
def toy_aug() -> AugmentConfig:
    return AugmentConfig(resize_to=(8, 8), pad_to=(10, 10), crop=(8, 8))


@pytest.fixture
def toy_cfg() -> TrainConfig:
    return TrainConfig(epochs=3, batch_size=8, seed=5, last_k=1).validate()


@pytest.fixture
def toy_learn_sets() -> Tuple[Dataset, Dataset]:
    return toy_dataset(256, Split.TRAIN, 2), toy_dataset(64, Split.TEST, 3)
