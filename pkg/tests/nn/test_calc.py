import math

import numpy as np
import pytest

from cresnet.nn.calc import Calc


@pytest.mark.parametrize(
    "size, k, stride, padding, expected",
    [
        (32, 3, 1, 1, 32),
        (32, 3, 2, 1, 16),
        (32, 1, 2, 0, 16),
        (8, 3, 2, 1, 4),
        (224, 7, 2, 3, 112),
        (112, 3, 2, 1, 56),
        (3, 3, 1, 0, 1),
        (5, 1, 1, 0, 5),
    ],
)
def test_conv_out_size(size: int, k: int, stride: int, padding: int, expected: int):
    assert Calc.conv_out_size(size, k, stride, padding) == expected


@pytest.mark.parametrize(
    "k, expected",
    [
        (1, 0),
        (3, 1),
        (7, 3),
    ],
)
def test_same_padding(k: int, expected: int):
    assert Calc.same_padding(k) == expected


@pytest.mark.parametrize(
    "shape, expected",
    [
        ((64, 3, 3, 3), 27),
        ((128, 64, 1, 1), 64),
        ((100, 512), 512),
    ],
)
def test_fan_in(shape, expected: int):
    assert Calc.fan_in(shape) == expected


def test_kaiming_std():
    assert Calc.kaiming_std(2) == pytest.approx(1.0)
    assert Calc.kaiming_std(27) == pytest.approx(math.sqrt(2 / 27))


def test_relative_error():
    err = Calc.relative_error(np.array([1.0, 0.0, 2.0]), np.array([1.0, 0.0, 1.0]))
    np.testing.assert_allclose(err, [0.0, 0.0, 0.5])


@pytest.mark.parametrize(
    "value, unit, expected",
    [
        (11_257_124, 1e6, 11.26),
        (593_217_536, 1e9, 0.59),
        (454_805_504, 1e9, 0.45),
        (1_335_762_944, 1e9, 1.34),
    ],
)
def test_round_to(value: int, unit: float, expected: float):
    assert Calc.round_to(value, unit) == expected
