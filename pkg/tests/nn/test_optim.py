import numpy as np
import pytest

from cresnet.errors import CheckpointError
from cresnet.nn.optim import Sgd, SgdConfig, sgd_step
from cresnet.nn.tensor import Parameter, ParamRole, use_precision


def test_sgd_plain_step():
    p = np.array([1.0, -2.0, 3.0])
    g = np.array([0.5, 0.5, -1.0])
    v = np.zeros(3)
    sgd_step([p], [g], [v], lr=1.0, momentum=0.0, weight_decay=0.0)
    np.testing.assert_allclose(p, [0.5, -2.5, 4.0])


def test_sgd_weight_decay_shrinks():
    p = np.array([1.0, -2.0])
    v = np.zeros(2)
    sgd_step([p], [None], [v], lr=0.01, momentum=0.0, weight_decay=0.0005)
    np.testing.assert_allclose(p, np.array([1.0, -2.0]) * (1 - 0.01 * 0.0005))


def test_sgd_momentum_two_steps():
    g = np.array([1.0, -3.0])
    p = np.zeros(2)
    v = np.zeros(2)
    for _ in range(2):
        sgd_step([p], [g], [v], lr=1.0, momentum=0.9, weight_decay=0.0)
    # g + (0.9g + g)
    np.testing.assert_allclose(p, -2.9 * g)


def test_sgd_weight_decay_magnitude_non_increasing():
    rng = np.random.default_rng(0)
    p = rng.normal(size=20)
    v = np.zeros(20)
    prev = np.abs(p).copy()
    for _ in range(50):
        sgd_step([p], [np.zeros(20)], [v], lr=0.01, momentum=0.9, weight_decay=0.0005)
        assert np.all(np.abs(p) <= prev)
        prev = np.abs(p).copy()


def _params():
    with use_precision("float64"):
        return [
            Parameter(np.ones((2, 1, 1, 1)), ParamRole.CONV_WEIGHT, name="a.conv.weight"),
            Parameter(np.ones(2), ParamRole.BN_GAMMA, name="a.bn.gamma"),
        ]


def test_optimizer_step_and_state():
    params = _params()
    dut = Sgd(params, SgdConfig(lr=0.1, momentum=0.9, weight_decay=0.0))
    params[0].grad = np.full((2, 1, 1, 1), 2.0)
    dut.step()
    np.testing.assert_allclose(params[0].data, 1.0 - 0.2)
    # gradが無いパラメータも weight_decay=0 なら動かない
    np.testing.assert_allclose(params[1].data, 1.0)

    state = dut.state_dict()
    assert set(state) == {"a.conv.weight", "a.bn.gamma"}
    np.testing.assert_allclose(state["a.conv.weight"], 2.0)

    other = Sgd(_params(), SgdConfig(lr=0.1))
    other.load_state_dict(state)
    np.testing.assert_array_equal(other.velocities["a.conv.weight"], state["a.conv.weight"])


def test_optimizer_lr_setter():
    dut = Sgd(_params())
    assert dut.lr == 0.01
    dut.lr = 0.001
    assert dut.config.lr == 0.001
    with pytest.raises(AssertionError):
        dut.lr = 0.0


def test_optimizer_zero_grad():
    params = _params()
    dut = Sgd(params)
    params[0].grad = np.ones((2, 1, 1, 1))
    dut.zero_grad()
    assert all(p.grad is None for p in params)


def test_optimizer_state_names_must_match():
    dut = Sgd(_params())
    with pytest.raises(CheckpointError):
        dut.load_state_dict({"a.conv.weight": np.zeros((2, 1, 1, 1))})
