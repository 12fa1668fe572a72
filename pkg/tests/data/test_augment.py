from functools import partial

import numpy as np
import pytest

from cresnet.data.augment import AugmentConfig, augment, batches, normalize_only, resize_nearest
from cresnet.data.dataset import Dataset, Split


def _image(c: int = 3, h: int = 32, w: int = 32, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=(c, h, w), dtype=np.uint8)


def test_augment_is_deterministic():
    cfg = AugmentConfig.preset_cifar()
    img = _image()
    a = augment(img, cfg, np.random.default_rng([1, 2, 3]))
    b = augment(img, cfg, np.random.default_rng([1, 2, 3]))
    np.testing.assert_array_equal(a, b)
    assert a.shape == (3, 32, 32)
    assert a.dtype == np.float32


def test_augment_without_randomness_equals_normalize():
    cfg = AugmentConfig(pad_to=(32, 32), hflip_prob=0.0)
    img = _image()
    np.testing.assert_array_equal(augment(img, cfg, np.random.default_rng(0)), normalize_only(img, cfg))


def test_augment_always_flip():
    cfg = AugmentConfig(pad_to=(32, 32), hflip_prob=1.0)
    img = _image()
    np.testing.assert_array_equal(augment(img, cfg, np.random.default_rng(0)), normalize_only(img, cfg)[:, :, ::-1])


def test_pad_is_centered():
    cfg = AugmentConfig()
    assert cfg.pad == (4, 4)
    assert cfg.max_offset == (8, 8)


def test_crop_offsets_stay_inside_padding():
    # 全画素255 なら、切り出し位置に応じて 0 パディングが端に現れる
    cfg = AugmentConfig(hflip_prob=0.0, mean=(0.0,), std=(1.0,))
    img = np.full((1, 32, 32), 255, dtype=np.uint8)
    rng = np.random.default_rng(0)
    for _ in range(20):
        out = augment(img, cfg, rng)
        assert out.shape == (1, 32, 32)
        ones = np.argwhere(out[0] == 1.0)
        # 元画像の 32x32 のうち少なくとも 24x24 は残る
        assert np.ptp(ones[:, 0]) + 1 >= 24 and np.ptp(ones[:, 1]) + 1 >= 24


@pytest.mark.parametrize("src, dst", [((28, 28), (32, 32)), ((32, 32), (32, 32)), ((32, 32), (16, 16))])
def test_resize_nearest(src, dst):
    out = resize_nearest(_image(1, *src), dst)
    assert out.shape == (1, *dst)


def test_resize_nearest_upsamples_by_repetition():
    img = np.arange(4, dtype=np.uint8).reshape(1, 2, 2)
    np.testing.assert_array_equal(resize_nearest(img, (4, 4))[0], [[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]])


def test_normalize_constants():
    cfg = AugmentConfig.preset_cifar()
    out = normalize_only(np.full((3, 32, 32), 255, dtype=np.uint8), cfg)
    expected = (1.0 - np.array(cfg.mean)) / np.array(cfg.std)
    np.testing.assert_allclose(out[:, 0, 0], expected, rtol=1e-6)


def test_grayscale_replicated_to_three_channels():
    cfg = AugmentConfig.for_dataset("mnist", channels=3)
    assert cfg.mean == (0.1307,)
    out = normalize_only(_image(1, 28, 28), cfg)
    assert out.shape == (3, 32, 32)
    np.testing.assert_array_equal(out[0], out[2])


def test_config_rejects_crop_larger_than_padding():
    with pytest.raises(AssertionError):
        AugmentConfig(pad_to=(30, 30))


def _dataset(n: int) -> Dataset:
    return Dataset(
        name="toy",
        split=Split.TRAIN,
        images=np.stack([np.full((1, 4, 4), i, dtype=np.uint8) for i in range(n)]),
        labels=np.arange(n, dtype=np.int64),
        class_count=n,
    )


@pytest.mark.parametrize("n, batch_size, sizes", [(10, 4, [4, 4, 2]), (8, 4, [4, 4]), (3, 8, [3])])
def test_batches_cover_every_item_once(n: int, batch_size: int, sizes):
    dut = list(batches(_dataset(n), batch_size, shuffle_seed=[0, 0, 0, 0]))
    assert [len(labels) for _, labels in dut] == sizes
    seen = np.concatenate([labels for _, labels in dut])
    assert sorted(seen.tolist()) == list(range(n))
    # 画像とラベルの対応は崩れない
    for x, labels in dut:
        np.testing.assert_array_equal(x.data[:, 0, 0, 0], labels)


def test_batches_shuffle_is_seeded():
    ds = _dataset(16)
    a = np.concatenate([y for _, y in batches(ds, 5, shuffle_seed=[7, 0, 1, 0])])
    b = np.concatenate([y for _, y in batches(ds, 5, shuffle_seed=[7, 0, 1, 0])])
    c = np.concatenate([y for _, y in batches(ds, 5, shuffle_seed=None)])
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(c, np.arange(16))


def test_batches_apply_transform():
    cfg = AugmentConfig(resize_to=(8, 8), pad_to=(8, 8), crop=(8, 8), mean=(0.0,), std=(1.0,))
    [(x, _)] = list(batches(_dataset(2), 2, transform=partial(normalize_only, cfg=cfg)))
    assert x.shape == (2, 1, 8, 8)
    np.testing.assert_allclose(x.data[1], 1.0 / 255.0, rtol=1e-6)
