import json
from pathlib import Path

import pytest

from cresnet.arch.registry import available, registry_get
from cresnet.arch.spec import BlockKind, SpecStatus, validate
from cresnet.errors import UnknownArchError

GOLDEN = json.loads((Path(__file__).parent.parent / "fixtures" / "golden_costs.json").read_text())["networks"]


def test_registry_lists_all_networks():
    assert sorted(available()) == sorted(GOLDEN)


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_registry_census(name: str):
    dut = registry_get(name)
    golden = GOLDEN[name]
    assert dut.name == name
    assert validate(dut) == []
    assert dut.solid_count == golden["solid"]
    assert dut.dashed_count == golden["dashed"]
    assert dut.conv_layer_count == golden["conv_layers"]


def test_cresnet18_a_dashed_pairs():
    dut = registry_get("cresnet18_a")
    assert dut.dashed_pairs() == ["64-128", "128-256", "256-512"]
    assert [s.repeats for s in dut.stages] == [1, 2, 1, 1]


def test_cresnet27_a2_second_jumpers():
    dut = registry_get("cresnet27_a2")
    dashed = [(j.stage, j.block, j.jumper) for j in dut.jumper_mask if j.is_dashed]
    assert (0, 0, 1) in dashed and (0, 1, 1) in dashed
    assert all(j.jumper == 1 or j.stride == 2 for j in dut.jumper_mask if j.is_dashed)


@pytest.mark.parametrize("name", ["cresnet27_b", "cresnet27_b1", "cresnet27_b2", "cresnet27_b3", "cresnet27_c1"])
def test_bottleneck_jumpers_have_no_bn(name: str):
    dut = registry_get(name)
    assert not dut.jumper_bn
    assert not any(j.bn for j in dut.jumper_mask)


def test_reconstructed_status():
    assert registry_get("cresnet27_a").status == SpecStatus.RECONSTRUCTED
    assert registry_get("cresnet18_a").status == SpecStatus.VERIFIED
    assert registry_get("cresnet27_c1").stages[0].block_kind == BlockKind.CROSS_BOTTLENECK3


def test_registry_returns_fresh_specs():
    assert registry_get("resnet18_ft") == registry_get("resnet18_ft")


def test_unknown_arch():
    with pytest.raises(UnknownArchError) as e:
        registry_get("nosuch")
    assert "cresnet18_a" in e.value.available
    assert "nosuch" in str(e.value)
