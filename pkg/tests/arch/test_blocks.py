from typing import List, Tuple

import numpy as np
import pytest

from cresnet.arch.blocks import Block, make_block, wbr_forward
from cresnet.arch.spec import BlockKind, JumperKind
from cresnet.errors import DimensionError, JumperError
from cresnet.nn.gradcheck import grad_check
from cresnet.nn.ops import avgpool_global, linear, softmax_cross_entropy
from cresnet.nn.tensor import Tensor, use_precision

S = JumperKind.SOLID
D = JumperKind.DASHED

# (kind, in_ch, plan, stride, jumper kinds, jumper bn)
BLOCK_CASES: List[Tuple[BlockKind, int, Tuple[int, ...], int, Tuple[JumperKind, ...], bool]] = [
    (BlockKind.BASIC_BLOCK, 4, (4, 4), 1, (S,), True),
    (BlockKind.BASIC_BLOCK, 4, (6, 6), 2, (D,), True),
    (BlockKind.BOTTLENECK, 4, (2, 2, 8), 2, (D,), True),
    (BlockKind.CROSS_BLOCK_A, 4, (4, 4, 4), 1, (S, S), True),
    (BlockKind.CROSS_BLOCK_A, 4, (6, 6, 6), 2, (D, D), True),
    (BlockKind.CROSS_BLOCK_A1, 4, (6, 6, 6), 2, (D, S), True),
    (BlockKind.CROSS_BLOCK_A2, 4, (4, 4, 4), 1, (S, D), True),
    (BlockKind.CROSS_BOTTLENECK3, 4, (2, 2, 8), 2, (D, D), False),
    (BlockKind.CROSS_BOTTLENECK6, 4, (2, 4, 4, 2, 4, 4), 1, (D, S, S), False),
    (BlockKind.CROSS_BOTTLENECK6, 4, (2, 4, 4, 2, 4, 4), 2, (D, D, D), False),
]


def _block(case, seed: int = 0) -> Block:
    kind, in_ch, plan, stride, kinds, bn = case
    return make_block(kind, in_ch, plan, stride, kinds, np.random.default_rng(seed), bn=bn, name="dut")


def _input(case, seed: int = 1) -> Tensor:
    return Tensor(np.random.default_rng(seed).normal(size=(2, case[1], 4, 4)), requires_grad=True)


@pytest.mark.parametrize("case", BLOCK_CASES)
def test_block_grad_check(case):
    with use_precision("float64"):
        dut = _block(case)
        x = _input(case)
        rng = np.random.default_rng(2)
        fc_w = Tensor(rng.normal(size=(3, dut.out_ch)))
        fc_b = Tensor(np.zeros(3))
        labels = np.array([0, 2])

        def loss() -> Tensor:
            return softmax_cross_entropy(linear(avgpool_global(dut.forward(x)), fc_w, fc_b), labels)

        tensors = {"x": x, **{p.name: p for p in dut.parameters()}}
        result = grad_check(loss, tensors, max_checks=12)
    assert result.max_rel_error < 1e-3, result.describe()


@pytest.mark.parametrize("case", BLOCK_CASES)
def test_tap_engine_matches_explicit_wiring(case):
    with use_precision("float64"):
        dut = _block(case)
        x = _input(case)
        np.testing.assert_allclose(dut.forward(x).data, dut.forward_explicit(x).data, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("case", BLOCK_CASES)
def test_block_output_shape(case):
    kind, in_ch, plan, stride, kinds, bn = case
    dut = _block(case)
    out = dut(Tensor(np.ones((2, in_ch, 4, 4))))
    assert out.shape == (2, plan[-1], 4 // stride, 4 // stride)
    assert dut.in_ch == in_ch and dut.out_ch == plan[-1]


def test_second_jumper_carries_first_layer_to_output():
    # layer2,3 が 0 を出すとき、出力は J2(out1) = out1 そのもの
    with use_precision("float64"):
        dut = make_block(BlockKind.CROSS_BLOCK_A, 4, (4, 4, 4), 1, (S, S), np.random.default_rng(0))
        dut.layers[1].conv.data[...] = 0.0
        dut.layers[2].conv.data[...] = 0.0
        x = Tensor(np.random.default_rng(1).normal(size=(2, 4, 4, 4)))
        out1 = wbr_forward(x, dut.layers[0])
        np.testing.assert_allclose(dut(x).data, out1.data, atol=1e-12)


def test_basic_block_adds_before_last_relu():
    with use_precision("float64"):
        dut = make_block(BlockKind.BASIC_BLOCK, 4, (4, 4), 1, (S,), np.random.default_rng(0))
        dut.layers[1].conv.data[...] = 0.0
        x = Tensor(np.random.default_rng(1).normal(size=(2, 4, 4, 4)))
        np.testing.assert_allclose(dut(x).data, np.maximum(x.data, 0.0), atol=1e-12)


@pytest.mark.parametrize(
    "kind, plan, stride, kinds",
    [
        (BlockKind.CROSS_BLOCK_A, (8, 8, 8), 2, (S, S)),
        (BlockKind.CROSS_BLOCK_A, (4, 4, 4), 2, (S, S)),
        (BlockKind.BASIC_BLOCK, (8, 8), 1, (S,)),
    ],
)
def test_illegal_solid_jumper(kind: BlockKind, plan, stride: int, kinds):
    with pytest.raises(JumperError) as e:
        make_block(kind, 4, plan, stride, kinds, np.random.default_rng(0))
    assert e.value.jumper_index == 0


def test_parameter_names():
    dut = make_block(BlockKind.CROSS_BLOCK_A, 4, (8, 8, 8), 2, (D, S), np.random.default_rng(0), name="stages.1.0")
    names = [p.name for p in dut.parameters()]
    assert "stages.1.0.layer1.conv.weight" in names
    assert "stages.1.0.layer3.bn.beta" in names
    assert "stages.1.0.jumper1.conv.weight" in names
    assert "stages.1.0.jumper1.bn.gamma" in names
    assert not any(n.startswith("stages.1.0.jumper2") for n in names)
    assert set(dut.bn_states()) == {
        "stages.1.0.layer1.bn",
        "stages.1.0.layer2.bn",
        "stages.1.0.layer3.bn",
        "stages.1.0.jumper1.bn",
    }


def test_bare_dashed_jumper_has_no_bn():
    dut = make_block(BlockKind.CROSS_BOTTLENECK3, 4, (2, 2, 8), 2, (D, D), np.random.default_rng(0), bn=False)
    assert [len(j.parameters()) for j in dut.jumpers] == [1, 1]
    assert all(j.bn_state is None for j in dut.jumpers)


def test_wrong_input_channels():
    dut = make_block(BlockKind.CROSS_BLOCK_A, 4, (4, 4, 4), 1, (S, S), np.random.default_rng(0))
    with pytest.raises(DimensionError):
        dut(Tensor(np.ones((1, 3, 4, 4))))


def test_trace_names_layers_and_jumpers():
    dut = make_block(BlockKind.CROSS_BLOCK_A, 4, (8, 8, 8), 2, (D, D), np.random.default_rng(0), name="b")
    trace: list = []
    dut.forward(Tensor(np.ones((2, 4, 4, 4))), trace)
    assert [name for name, _ in trace] == ["b.layer1", "b.jumper1", "b.layer2", "b.jumper2", "b.layer3"]
    assert "tap0->tap2" in dut.describe()
