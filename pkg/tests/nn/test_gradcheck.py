import numpy as np
import pytest

from cresnet.nn.gradcheck import grad_check
from cresnet.nn.ops import (
    BnState,
    add,
    avgpool_global,
    batchnorm2d,
    conv2d,
    linear,
    maxpool2d,
    relu,
    softmax_cross_entropy,
    tensor_sum,
)
from cresnet.nn.tensor import Tensor, use_precision


@pytest.fixture(autouse=True)
def float64():
    with use_precision("float64"):
        yield


def _t(rng: np.random.Generator, *shape: int) -> Tensor:
    return Tensor(rng.normal(size=shape), requires_grad=True)


def _head(h: Tensor, rng: np.random.Generator) -> Tensor:
    """
    Scalar with non-uniform channel weights: sum(fc(avgpool(h)))
    """
    w = Tensor(rng.normal(size=(2, h.shape[1])))
    return tensor_sum(linear(avgpool_global(h), w, Tensor(np.zeros(2))))


def test_grad_check_linear_exact():
    rng = np.random.default_rng(0)
    x, w, b = _t(rng, 4, 5), _t(rng, 3, 5), _t(rng, 3)
    result = grad_check(lambda: tensor_sum(linear(x, w, b)), {"x": x, "w": w, "b": b})
    assert result.max_rel_error < 1e-6
    assert result.checked == x.size + w.size + b.size


def test_grad_check_relu_conv_1x1():
    rng = np.random.default_rng(1)
    x, w = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 1, 1)
    result = grad_check(lambda: tensor_sum(relu(conv2d(x, w))), {"x": x, "w": w})
    assert result.max_rel_error < 1e-3


@pytest.mark.parametrize("k, stride, padding", [(3, 1, 1), (3, 2, 1), (1, 2, 0), (1, 1, 0)])
def test_grad_check_conv(k: int, stride: int, padding: int):
    rng = np.random.default_rng(2)
    x, w = _t(rng, 2, 3, 6, 6), _t(rng, 4, 3, k, k)
    result = grad_check(lambda: _head(conv2d(x, w, stride, padding), np.random.default_rng(20)), {"x": x, "w": w})
    assert result.max_rel_error < 1e-3


def test_grad_check_wbr_layer():
    rng = np.random.default_rng(3)
    x, w = _t(rng, 4, 2, 4, 4), _t(rng, 3, 2, 3, 3)
    gamma = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True)
    beta = _t(rng, 3)
    state = BnState(3)
    result = grad_check(
        lambda: _head(relu(batchnorm2d(conv2d(x, w, padding=1), gamma, beta, state)), np.random.default_rng(30)),
        {"x": x, "w": w, "gamma": gamma, "beta": beta},
    )
    assert result.max_rel_error < 1e-3


def test_grad_check_add_and_maxpool():
    rng = np.random.default_rng(4)
    a, b = _t(rng, 2, 3, 4, 4), _t(rng, 2, 3, 4, 4)
    result = grad_check(
        lambda: _head(maxpool2d(add(a, b), k=3, stride=2, padding=1), np.random.default_rng(40)), {"a": a, "b": b}
    )
    assert result.max_rel_error < 1e-3


def test_grad_check_softmax_cross_entropy():
    rng = np.random.default_rng(5)
    logits = _t(rng, 6, 4)
    labels = np.array([0, 1, 2, 3, 1, 0])
    result = grad_check(lambda: softmax_cross_entropy(logits, labels), {"logits": logits})
    assert result.max_rel_error < 1e-5


def test_grad_check_reports_worst():
    rng = np.random.default_rng(6)
    x = _t(rng, 3, 4)
    w, b = _t(rng, 2, 4), _t(rng, 2)
    result = grad_check(lambda: tensor_sum(linear(x, w, b)), {"x": x, "w": w}, max_checks=3)
    assert result.checked == 6
    assert result.worst_tensor in ("x", "w")
    assert 0 <= result.worst_index < 12
    assert "max_rel_error" in result.describe()
