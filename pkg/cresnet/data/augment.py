import logging
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

from cresnet.data.dataset import Dataset
from cresnet.nn.tensor import Tensor

Transform = Callable[[np.ndarray], np.ndarray]
SeedLike = int | Sequence[int]


@dataclass
class AugmentConfig:
    """
    resize -> zero pad (centered) -> random crop -> horizontal flip -> (x/255 - mean) / std

    `channels` replicates grayscale input when the network expects more channels.
    """

    resize_to: Tuple[int, int] = (32, 32)
    pad_to: Tuple[int, int] = (40, 40)
    crop: Tuple[int, int] = (32, 32)
    hflip_prob: float = 0.5
    mean: Tuple[float, ...] = (0.491, 0.482, 0.447)
    std: Tuple[float, ...] = (0.247, 0.243, 0.262)
    seed: int = 0
    channels: Optional[int] = None

    def __post_init__(self) -> None:
        assert self.crop[0] <= self.pad_to[0] and self.crop[1] <= self.pad_to[1], (
            f"crop {self.crop} larger than pad_to {self.pad_to}"
        )
        assert self.resize_to[0] <= self.pad_to[0] and self.resize_to[1] <= self.pad_to[1], (
            f"resize_to {self.resize_to} larger than pad_to {self.pad_to}"
        )
        assert 0.0 <= self.hflip_prob <= 1.0, f"{self.hflip_prob=}"
        assert len(self.mean) == len(self.std), f"{self.mean=} {self.std=}"
        assert all(s > 0 for s in self.std), f"{self.std=}"

    @property
    def pad(self) -> Tuple[int, int]:
        """
        Top/left padding that centers the resized image in pad_to
        """
        return ((self.pad_to[0] - self.resize_to[0]) // 2, (self.pad_to[1] - self.resize_to[1]) // 2)

    @property
    def max_offset(self) -> Tuple[int, int]:
        return (self.pad_to[0] - self.crop[0], self.pad_to[1] - self.crop[1])

    @classmethod
    def preset_cifar(cls, **kwargs) -> "AugmentConfig":
        return cls(mean=(0.491, 0.482, 0.447), std=(0.247, 0.243, 0.262), **kwargs)

    @classmethod
    def preset_mnist(cls, **kwargs) -> "AugmentConfig":
        # FashionMNISTも同じ定数で扱う
        return cls(mean=(0.1307,), std=(0.3081,), **kwargs)

    @classmethod
    def for_dataset(cls, name: str, **kwargs) -> "AugmentConfig":
        if name in ("mnist", "fashion_mnist"):
            return cls.preset_mnist(**kwargs)
        return cls.preset_cifar(**kwargs)


def resize_nearest(image: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """
    (C, H, W) nearest-neighbour resize
    """
    _, h, w = image.shape
    if (h, w) == tuple(size):
        return image
    rows = (np.arange(size[0]) * h // size[0]).astype(np.intp)
    cols = (np.arange(size[1]) * w // size[1]).astype(np.intp)
    return image[:, rows[:, None], cols[None, :]]


def _normalize(image: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    c = image.shape[0]
    mean = np.asarray(cfg.mean, dtype=np.float32)
    std = np.asarray(cfg.std, dtype=np.float32)
    assert len(mean) in (1, c), f"{len(mean)} normalization channels for {c}-channel image"
    out = (image.astype(np.float32) / np.float32(255.0) - mean[:, None, None]) / std[:, None, None]
    if cfg.channels is not None and cfg.channels != c:
        assert c == 1, f"cannot replicate {c} channels to {cfg.channels}"
        out = np.repeat(out, cfg.channels, axis=0)
    return out


def augment(image: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Training-time path; deterministic given the generator state
    """
    img = resize_nearest(image, cfg.resize_to)
    c = img.shape[0]
    top, left = cfg.pad
    padded = np.zeros((c, cfg.pad_to[0], cfg.pad_to[1]), dtype=img.dtype)
    padded[:, top : top + cfg.resize_to[0], left : left + cfg.resize_to[1]] = img
    max_y, max_x = cfg.max_offset
    dy, dx = rng.integers(0, (max_y + 1, max_x + 1), size=2)
    out = padded[:, dy : dy + cfg.crop[0], dx : dx + cfg.crop[1]]
    if rng.random() < cfg.hflip_prob:
        out = out[:, :, ::-1]
    return _normalize(out, cfg)


def normalize_only(image: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    """
    Test-time path: resize and normalize, no pad/crop/flip
    """
    return _normalize(resize_nearest(image, cfg.resize_to), cfg)


def batches(
    dataset: Dataset,
    batch_size: int,
    shuffle_seed: Optional[SeedLike] = None,
    transform: Optional[Transform] = None,
) -> Iterator[Tuple[Tensor, np.ndarray]]:
    """
    Every item exactly once; the final partial batch is emitted.
    `shuffle_seed=None` keeps dataset order.
    """
    assert batch_size >= 1, f"{batch_size=}"
    n = len(dataset)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    logging.debug(f"batches: {dataset.name} {n=} {batch_size=} {shuffle_seed=}")
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        raw = dataset.images[idx]
        if transform is None:
            images = raw.astype(np.float32)
        else:
            images = np.stack([transform(img) for img in raw])
        yield Tensor(images), dataset.labels[idx]
