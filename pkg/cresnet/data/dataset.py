import enum
import gzip
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from cresnet.errors import ConfigError, DataFormatError, DataMissingError

DATA_DIR_ENV = "CRESNET_DATA_DIR"
DEFAULT_DATA_DIR = "./data"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_PIXELS = 3 * 32 * 32


@enum.unique
class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class Dataset:
    """
    uint8 images (N, C, H, W) with integer labels in [0, class_count)
    """

    name: str
    split: Split
    images: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self) -> None:
        assert self.images.ndim == 4, f"{self.name}: images must be (N, C, H, W), got {self.images.shape}"
        assert self.images.dtype == np.uint8, f"{self.name}: {self.images.dtype=}"
        assert self.labels.shape == (self.images.shape[0],), (
            f"{self.name}: {self.labels.shape=} vs {self.images.shape=}"
        )
        if len(self.labels):
            assert 0 <= self.labels.min() and self.labels.max() < self.class_count, (
                f"{self.name}: labels outside [0, {self.class_count})"
            )

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        c, h, w = self.images.shape[1:]
        return (int(c), int(h), int(w))

    def subset(self, n: int, seed: int = 0) -> "Dataset":
        """
        Seeded subset of `n` items (class-agnostic)
        """
        if n >= len(self):
            return self
        idx = np.sort(np.random.default_rng(seed).choice(len(self), size=n, replace=False))
        return Dataset(
            name=self.name,
            split=self.split,
            images=self.images[idx],
            labels=self.labels[idx],
            class_count=self.class_count,
        )

    def describe(self) -> str:
        counts = np.bincount(self.labels, minlength=self.class_count)
        dst = f"# Dataset {self.name} ({self.split.value})\n"
        dst += f" - items: {len(self)}\n"
        dst += f" - image shape: {self.image_shape}\n"
        dst += f" - classes: {self.class_count} (min/max per class: {counts.min()}/{counts.max()})\n"
        return dst


##################################################################################
# IDX (MNIST / FashionMNIST)


def _read_bytes(path: str | Path) -> bytes:
    p = Path(path)
    if p.suffix == ".gz":
        with gzip.open(p, "rb") as f:
            return f.read()
    return p.read_bytes()


def read_idx(path: str | Path, expected_magic: int) -> np.ndarray:
    """
    Parse an IDX file: magic (2 zero bytes, type 0x08, ndim), big-endian u32 dims, u8 payload
    """
    data = _read_bytes(path)
    if len(data) < 4:
        raise DataFormatError(str(path), "file too short for an IDX header", offset=len(data))
    magic = int.from_bytes(data[:4], "big")
    if magic != expected_magic:
        raise DataFormatError(
            str(path), f"bad magic 0x{magic:08x} (expected 0x{expected_magic:08x})", offset=0
        )
    ndim = data[3]
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DataFormatError(str(path), f"truncated header for {ndim} dims", offset=len(data))
    dims = tuple(int.from_bytes(data[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    expected = header + int(np.prod(dims))
    if len(data) < expected:
        raise DataFormatError(
            str(path), f"truncated payload: {dims=} needs {expected} bytes, got {len(data)}", offset=len(data)
        )
    if len(data) > expected:
        logging.warning(f"{path}: {len(data) - expected} trailing bytes ignored")
    return np.frombuffer(data, dtype=np.uint8, count=expected - header, offset=header).reshape(dims)


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    name: str = "mnist",
    split: Split = Split.TRAIN,
    class_count: int = 10,
) -> Dataset:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise DataFormatError(str(images_path), f"unexpected IDX dims {images.shape} / {labels.shape}", offset=3)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            str(labels_path), f"{labels.shape[0]} labels for {images.shape[0]} images", offset=4
        )
    bad = np.flatnonzero(labels >= class_count)
    if len(bad):
        raise DataFormatError(
            str(labels_path), f"label {labels[bad[0]]} outside [0, {class_count})", offset=8 + int(bad[0])
        )
    dataset = Dataset(
        name=name,
        split=split,
        images=images[:, None, :, :].copy(),
        labels=labels.astype(np.int64),
        class_count=class_count,
    )
    logging.debug(dataset.describe())
    return dataset


##################################################################################
# CIFAR binary


@enum.unique
class CifarVariant(enum.Enum):
    CIFAR10 = "cifar10"
    CIFAR100 = "cifar100"

    @property
    def label_bytes(self) -> int:
        # cifar100 は coarse, fine の2バイト
        return 1 if self == CifarVariant.CIFAR10 else 2

    @property
    def record_size(self) -> int:
        return self.label_bytes + CIFAR_PIXELS

    @property
    def class_count(self) -> int:
        return 10 if self == CifarVariant.CIFAR10 else 100


def load_cifar(
    paths: Sequence[str | Path] | str | Path,
    variant: CifarVariant | str,
    split: Split = Split.TRAIN,
) -> Dataset:
    """
    Records of label byte(s) + 1024 R, 1024 G, 1024 B row-major pixels.
    CIFAR-100 uses the fine (second) label.
    """
    variant = CifarVariant(variant)
    if isinstance(paths, (str, Path)):
        paths = [paths]
    images: List[np.ndarray] = []
    labels: List[np.ndarray] = []
    for path in paths:
        data = _read_bytes(path)
        rec = variant.record_size
        if len(data) % rec != 0:
            raise DataFormatError(
                str(path),
                f"length {len(data)} is not a multiple of the {variant.value} record size {rec}",
                offset=(len(data) // rec) * rec,
            )
        records = np.frombuffer(data, dtype=np.uint8).reshape(-1, rec)
        labels.append(records[:, variant.label_bytes - 1].astype(np.int64))
        images.append(records[:, variant.label_bytes :].reshape(-1, 3, 32, 32))
    all_labels = np.concatenate(labels) if labels else np.zeros(0, dtype=np.int64)
    bad = np.flatnonzero(all_labels >= variant.class_count)
    if len(bad):
        raise DataFormatError(
            str(paths[0]), f"label {all_labels[bad[0]]} outside [0, {variant.class_count})"
        )
    dataset = Dataset(
        name=variant.value,
        split=split,
        images=np.concatenate(images).copy() if images else np.zeros((0, 3, 32, 32), dtype=np.uint8),
        labels=all_labels,
        class_count=variant.class_count,
    )
    logging.debug(dataset.describe())
    return dataset


##################################################################################
# catalog


def resolve_data_dir(flag: Optional[str] = None) -> Path:
    """
    --data-dir, then $CRESNET_DATA_DIR, then ./data
    """
    if flag:
        return Path(flag)
    return Path(os.environ.get(DATA_DIR_ENV, DEFAULT_DATA_DIR))


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    subdir: str
    files: Dict[Split, Tuple[str, ...]]
    class_count: int
    channels: int


class DatasetCatalog:
    """
    Expected on-disk layout under the data directory. IDX files may also be gzipped (.gz).
    """

    ENTRIES: Dict[str, CatalogEntry] = {
        "mnist": CatalogEntry(
            name="mnist",
            subdir="mnist",
            files={
                Split.TRAIN: ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                Split.TEST: ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
            },
            class_count=10,
            channels=1,
        ),
        "fashion_mnist": CatalogEntry(
            name="fashion_mnist",
            subdir="fashion_mnist",
            files={
                Split.TRAIN: ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                Split.TEST: ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
            },
            class_count=10,
            channels=1,
        ),
        "cifar10": CatalogEntry(
            name="cifar10",
            subdir="cifar10/cifar-10-batches-bin",
            files={
                Split.TRAIN: tuple(f"data_batch_{i}.bin" for i in range(1, 6)),
                Split.TEST: ("test_batch.bin",),
            },
            class_count=10,
            channels=3,
        ),
        "cifar100": CatalogEntry(
            name="cifar100",
            subdir="cifar100/cifar-100-binary",
            files={Split.TRAIN: ("train.bin",), Split.TEST: ("test.bin",)},
            class_count=100,
            channels=3,
        ),
    }

    def __init__(self, data_dir: Optional[str | Path] = None):
        self.data_dir = Path(data_dir) if data_dir is not None else resolve_data_dir()

    @classmethod
    def names(cls) -> List[str]:
        return list(cls.ENTRIES)

    @classmethod
    def entry(cls, name: str) -> CatalogEntry:
        if name not in cls.ENTRIES:
            raise ConfigError(f"unknown dataset '{name}'. available: {', '.join(cls.ENTRIES)}")
        return cls.ENTRIES[name]

    def expected_paths(self, name: str, split: Split) -> List[Path]:
        e = self.entry(name)
        return [self.data_dir / e.subdir / f for f in e.files[split]]

    def _locate(self, name: str, split: Split) -> List[Path]:
        found = []
        missing = []
        for p in self.expected_paths(name, split):
            gz = p.with_name(p.name + ".gz")
            if p.exists():
                found.append(p)
            elif gz.exists():
                logging.warning(f"{p} not found, using {gz}")
                found.append(gz)
            else:
                missing.append(p)
        if missing:
            raise DataMissingError(name, str(self.data_dir), [str(p) for p in missing])
        return found

    def available(self, name: str) -> bool:
        try:
            for split in Split:
                self._locate(name, split)
        except DataMissingError:
            return False
        return True

    def load(self, name: str, split: Split | str) -> Dataset:
        split = Split(split)
        e = self.entry(name)
        paths = self._locate(name, split)
        logging.info(f"loading {name} ({split.value}) from {self.data_dir / e.subdir}")
        if e.channels == 1:
            return load_idx(paths[0], paths[1], name=name, split=split, class_count=e.class_count)
        return load_cifar(paths, CifarVariant(name), split=split)
